//! File-backed persistence: scene and job records as JSON documents, job
//! results as immutable blobs named by their SHA-256.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use morphforge::scene::Scene;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jobs::{JobKind, JobRequest};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("revision conflict: current revision is {current}")]
    Conflict { current: u64 },
    #[error("scene has {0} dependent jobs; repeat with confirmation to delete them")]
    HasDependents(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub revision: u64,
    pub scene: Scene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    /// Statuses only move forward: queued → running → done | failed.
    pub fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running | JobStatus::Failed)
                | (JobStatus::Running, JobStatus::Done | JobStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Fraction of work finished, in `[0, 1]`.
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub scene_revision: u64,
    pub request: JobRequest,
    /// SHA-256 of the result blob once done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
}

pub fn new_id() -> String {
    uuid::Uuid::now_v7().simple().to_string()
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["scenes", "jobs", "results"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Store { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Advisory lock for one entity, shared by all handles of this store.
    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("poisoned").entry(key.to_string()).or_default().clone()
    }

    fn path(&self, dir: &str, id: &str) -> Result<PathBuf, StoreError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(self.root.join(dir).join(format!("{id}.json")))
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("store paths have a parent");
        let tmp = dir.join(format!(".{}.tmp", new_id()));
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn read<T: for<'de> Deserialize<'de>>(&self, dir: &str, id: &str) -> Result<T, StoreError> {
        let path = self.path(dir, id)?;
        match std::fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(id.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    fn list<T: for<'de> Deserialize<'de>>(&self, dir: &str) -> Result<Vec<T>, StoreError> {
        let mut names: Vec<String> = std::fs::read_dir(self.root.join(dir))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter_map(|n| n.strip_suffix(".json").map(str::to_string))
            .collect();
        names.sort();
        names.iter().map(|id| self.read(dir, id)).collect()
    }

    // --- Scenes ------------------------------------------------------------

    pub fn create_scene(&self, scene: Scene) -> Result<SceneRecord, StoreError> {
        let rec = SceneRecord { id: new_id(), revision: 1, scene };
        Self::write_atomic(&self.path("scenes", &rec.id)?, &serde_json::to_vec_pretty(&rec)?)?;
        Ok(rec)
    }

    pub fn get_scene(&self, id: &str) -> Result<SceneRecord, StoreError> {
        self.read("scenes", id)
    }

    pub fn list_scenes(&self) -> Result<Vec<SceneRecord>, StoreError> {
        self.list("scenes")
    }

    /// Replaces a scene and bumps its revision. With `expected` set the
    /// update only succeeds if the stored revision still matches.
    pub fn update_scene(&self, id: &str, scene: Scene, expected: Option<u64>) -> Result<SceneRecord, StoreError> {
        let lock = self.lock(&format!("scene/{id}"));
        let _guard = lock.lock().expect("poisoned");
        let current = self.get_scene(id)?;
        if let Some(rev) = expected {
            if rev != current.revision {
                return Err(StoreError::Conflict { current: current.revision });
            }
        }
        let rec = SceneRecord { id: id.to_string(), revision: current.revision + 1, scene };
        Self::write_atomic(&self.path("scenes", id)?, &serde_json::to_vec_pretty(&rec)?)?;
        Ok(rec)
    }

    /// Deletes a scene. Jobs that reference it, and their results, are only
    /// deleted with `cascade`; otherwise their existence is an error.
    pub fn delete_scene(&self, id: &str, cascade: bool) -> Result<Vec<String>, StoreError> {
        let lock = self.lock(&format!("scene/{id}"));
        let _guard = lock.lock().expect("poisoned");
        let path = self.path("scenes", id)?;
        if !path.exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let dependents: Vec<Job> = self.list_jobs()?.into_iter().filter(|j| j.request.scene_id == id).collect();
        if !dependents.is_empty() && !cascade {
            return Err(StoreError::HasDependents(dependents.len()));
        }
        let mut removed = Vec::new();
        for job in &dependents {
            if let Some(hash) = &job.result {
                let others = self.list_jobs()?.into_iter().filter(|j| j.id != job.id && j.result.as_ref() == Some(hash));
                if others.count() == 0 {
                    let _ = std::fs::remove_file(self.path("results", hash)?);
                }
            }
            std::fs::remove_file(self.path("jobs", &job.id)?)?;
            removed.push(job.id.clone());
        }
        std::fs::remove_file(path)?;
        Ok(removed)
    }

    // --- Jobs --------------------------------------------------------------

    pub fn put_job(&self, job: &Job) -> Result<(), StoreError> {
        let lock = self.lock(&format!("job/{}", job.id));
        let _guard = lock.lock().expect("poisoned");
        Self::write_atomic(&self.path("jobs", &job.id)?, &serde_json::to_vec_pretty(job)?)
    }

    pub fn get_job(&self, id: &str) -> Result<Job, StoreError> {
        self.read("jobs", id)
    }

    pub fn list_jobs(&self) -> Result<Vec<Job>, StoreError> {
        self.list("jobs")
    }

    /// Marks jobs left queued or running by a previous process as failed.
    pub fn recover_interrupted(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for mut job in self.list_jobs()? {
            if !job.status.is_finished() {
                job.status = JobStatus::Failed;
                job.reason = Some("interrupted".into());
                self.put_job(&job)?;
                ids.push(job.id);
            }
        }
        Ok(ids)
    }

    // --- Results -----------------------------------------------------------

    /// Stores an immutable blob and returns its hash.
    pub fn put_result(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let hash = content_hash(bytes);
        let path = self.path("results", &hash)?;
        if !path.exists() {
            Self::write_atomic(&path, bytes)?;
        }
        Ok(hash)
    }

    pub fn get_result(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path("results", hash)?;
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(hash.to_string()),
            _ => e.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use morphforge::scene::load_scene;

    fn scene() -> Scene {
        load_scene(br#"{"goals":[{"id":"g","position":[0.3,0,0.2],"orientation6d":[1,0,0,0,1,0],"tolerance":"position_only"}]}"#)
            .unwrap()
    }

    #[test]
    fn status_moves_forward_only() {
        use JobStatus::*;
        assert!(Queued.can_become(Running) && Running.can_become(Done) && Running.can_become(Failed));
        assert!(!Done.can_become(Running) && !Failed.can_become(Done) && !Running.can_become(Queued));
    }

    #[test]
    fn scene_revisions_and_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let rec = store.create_scene(scene()).unwrap();
        assert_eq!(rec.revision, 1);
        let up = store.update_scene(&rec.id, scene(), Some(1)).unwrap();
        assert_eq!(up.revision, 2);
        assert!(matches!(store.update_scene(&rec.id, scene(), Some(1)), Err(StoreError::Conflict { current: 2 })));
        assert!(matches!(store.get_scene("nope"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.get_scene("../etc"), Err(StoreError::NotFound(_))));
        assert_eq!(Store::open(dir.path()).unwrap().get_scene(&rec.id).unwrap(), up);
    }

    #[test]
    fn results_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let h = store.put_result(b"{}\n").unwrap();
        assert_eq!(h, content_hash(b"{}\n"));
        assert_eq!(store.put_result(b"{}\n").unwrap(), h);
        assert_eq!(store.get_result(&h).unwrap(), b"{}\n");
    }
}
