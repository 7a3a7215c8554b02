//! REST and server-sent-event facade over the design core: scene storage,
//! queued design jobs with progress streaming, and render-ready results.

mod api;
pub mod jobs;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use morphforge::scene::Scene;
use morphforge::solver::{Progress, ProgressEvent, Stage};
use serde::Serialize;
use tokio::sync::{mpsc, watch};

pub use api::router;
use jobs::{encode_result, execute, JobError};
use store::{Job, JobStatus, Store, StoreError};

/// Maximum number of jobs waiting for a worker.
pub const QUEUE_BOUND: usize = 64;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    pub workers: usize,
}

impl ServiceConfig {
    /// Reads `MF_DATA_DIR`, `MF_BIND_ADDR` and `MF_WORKERS`.
    pub fn from_env() -> Result<Self, String> {
        let data_dir = std::env::var_os("MF_DATA_DIR").map_or_else(|| PathBuf::from("mf-data"), PathBuf::from);
        let bind = std::env::var("MF_BIND_ADDR")
            .unwrap_or_else(|_| "127.0.0.1:8080".into())
            .parse()
            .map_err(|e| format!("MF_BIND_ADDR: {e}"))?;
        let workers = match std::env::var("MF_WORKERS") {
            Ok(v) => v.parse().map_err(|e| format!("MF_WORKERS: {e}"))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        if workers == 0 {
            return Err("MF_WORKERS must be at least 1".into());
        }
        Ok(ServiceConfig { data_dir, bind, workers })
    }
}

/// Live view of a job, pushed to event-stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobSnapshot {
    pub status: JobStatus,
    pub progress: f64,
    pub stage: Option<Stage>,
    /// Candidates (or assemblies, or generations) finished so far.
    pub done: usize,
    pub total: usize,
    pub best_loss: Option<f64>,
    pub reason: Option<String>,
}

impl JobSnapshot {
    fn of(job: &Job) -> Self {
        JobSnapshot {
            status: job.status,
            progress: job.progress,
            stage: None,
            done: 0,
            total: 0,
            best_loss: None,
            reason: job.reason.clone(),
        }
    }
}

/// In-memory state of a job owned by this process.
pub(crate) struct JobHandle {
    job: Mutex<Job>,
    scene: Scene,
    cancel: AtomicBool,
    tx: watch::Sender<JobSnapshot>,
}

impl JobHandle {
    pub(crate) fn job(&self) -> Job {
        self.job.lock().expect("poisoned").clone()
    }

    pub(crate) fn subscribe(&self) -> watch::Receiver<JobSnapshot> {
        self.tx.subscribe()
    }
}

impl Progress for JobHandle {
    fn report(&self, e: ProgressEvent) {
        let fraction = if e.total == 0 { 0.0 } else { e.done as f64 / e.total as f64 };
        let progress = {
            let mut job = self.job.lock().expect("poisoned");
            job.progress = job.progress.max(fraction.clamp(0.0, 1.0));
            job.progress
        };
        self.tx.send_modify(|s| {
            s.progress = progress;
            s.stage = Some(e.stage);
            s.done = e.done;
            s.total = e.total;
            s.best_loss = e.best_loss.or(s.best_loss);
        });
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

pub struct AppState {
    pub store: Store,
    handles: Mutex<HashMap<String, Arc<JobHandle>>>,
    queue: mpsc::Sender<String>,
}

#[derive(Debug)]
pub(crate) enum SubmitError {
    QueueFull,
    Store(StoreError),
}

impl AppState {
    /// Opens the store, fails jobs a previous process left unfinished, and
    /// starts `workers` job runners on the current runtime.
    pub fn start(data_dir: impl Into<PathBuf>, workers: usize) -> Result<Arc<Self>, StoreError> {
        let store = Store::open(data_dir)?;
        store.recover_interrupted()?;
        let (tx, rx) = mpsc::channel(QUEUE_BOUND);
        let state = Arc::new(AppState { store, handles: Mutex::new(HashMap::new()), queue: tx });
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..workers.max(1) {
            let (state, rx) = (state.clone(), rx.clone());
            tokio::spawn(async move {
                loop {
                    let next = rx.lock().await.recv().await;
                    let Some(id) = next else { break };
                    let s = state.clone();
                    let _ = tokio::task::spawn_blocking(move || s.run(&id)).await;
                }
            });
        }
        Ok(state)
    }

    pub(crate) fn handle(&self, id: &str) -> Option<Arc<JobHandle>> {
        self.handles.lock().expect("poisoned").get(id).cloned()
    }

    /// Current job record, preferring live state over the stored copy.
    pub(crate) fn job(&self, id: &str) -> Result<Job, StoreError> {
        match self.handle(id) {
            Some(h) => Ok(h.job()),
            None => self.store.get_job(id),
        }
    }

    pub(crate) fn submit(&self, job: Job, scene: Scene) -> Result<Job, SubmitError> {
        let id = job.id.clone();
        let (tx, _) = watch::channel(JobSnapshot::of(&job));
        let handle = Arc::new(JobHandle { job: Mutex::new(job.clone()), scene, cancel: AtomicBool::new(false), tx });
        let permit = self.queue.try_reserve().map_err(|_| SubmitError::QueueFull)?;
        self.store.put_job(&job).map_err(SubmitError::Store)?;
        self.handles.lock().expect("poisoned").insert(id.clone(), handle);
        permit.send(id);
        Ok(job)
    }

    /// Moves a job to `status` if that is a forward transition, persists it
    /// and notifies subscribers.
    fn transition(&self, h: &JobHandle, status: JobStatus, reason: Option<String>, result: Option<String>) -> bool {
        let job = {
            let mut job = h.job.lock().expect("poisoned");
            if !job.status.can_become(status) {
                return false;
            }
            job.status = status;
            job.reason = reason;
            if status == JobStatus::Done {
                job.progress = 1.0;
                job.result = result;
            }
            job.clone()
        };
        if let Err(e) = self.store.put_job(&job) {
            eprintln!("cannot persist job {}: {e}", job.id);
        }
        h.tx.send_modify(|s| {
            s.status = job.status;
            s.progress = job.progress;
            s.reason = job.reason.clone();
        });
        if job.status.is_finished() {
            self.handles.lock().expect("poisoned").remove(&job.id);
        }
        true
    }

    /// Cancels a job: queued jobs fail immediately, running jobs at their
    /// next stage boundary. Returns `None` if the job already finished.
    pub(crate) fn cancel(&self, id: &str) -> Result<Option<Job>, StoreError> {
        let Some(h) = self.handle(id) else {
            let job = self.store.get_job(id)?;
            return Ok(if job.status.is_finished() { None } else { Some(job) });
        };
        h.cancel.store(true, Ordering::SeqCst);
        match h.job().status {
            JobStatus::Queued => {
                self.transition(&h, JobStatus::Failed, Some("cancelled".into()), None);
            }
            JobStatus::Running => {}
            JobStatus::Done | JobStatus::Failed => return Ok(None),
        }
        Ok(Some(h.job()))
    }

    fn run(&self, id: &str) {
        let Some(h) = self.handle(id) else { return };
        if h.cancel.load(Ordering::SeqCst) || !self.transition(&h, JobStatus::Running, None, None) {
            return;
        }
        let request = h.job().request;
        let outcome = execute(&request, &h.scene, h.as_ref());
        match outcome {
            Ok(result) => match self.store.put_result(&encode_result(&result)) {
                Ok(hash) => {
                    self.transition(&h, JobStatus::Done, None, Some(hash));
                }
                Err(e) => {
                    self.transition(&h, JobStatus::Failed, Some(format!("store: {e}")), None);
                }
            },
            Err(JobError::Cancelled) => {
                self.transition(&h, JobStatus::Failed, Some("cancelled".into()), None);
            }
            Err(e) => {
                self.transition(&h, JobStatus::Failed, Some(e.to_string()), None);
            }
        }
    }
}

/// Serves the API until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::start(&cfg.data_dir, cfg.workers).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    eprintln!("listening on http://{} (data in {})", listener.local_addr()?, cfg.data_dir.display());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
