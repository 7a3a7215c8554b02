//! Job requests and their execution. The command line runs the same code,
//! so a job and the equivalent CLI invocation produce identical results.

use morphforge::config::{ConfigError, RunConfig};
use morphforge::kinematics::{DesignMode, DesignParams, JointVector};
use morphforge::render::{render_model, RenderModel};
use morphforge::scene::Scene;
use morphforge::search::{brute_force, genetic_search, AssemblyEvaluator, GenerationStats, SearchError};
use morphforge::solver::{design_task, rank_candidates, score_design, Candidate, Progress, SolverError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Design,
    BruteForce,
    Ga,
    Evaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub kind: JobKind,
    pub scene_id: String,
    #[serde(default)]
    pub config: RunConfig,
    /// Design to score; required for `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<DesignParams>,
    /// Joint vectors per goal for `evaluate`; solved by IK when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ik: Option<Vec<JointVector>>,
}

/// Score of one enumerated assembly in a brute-force result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyEntry {
    pub slots: Vec<usize>,
    pub benchmark_loss: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub kind: JobKind,
    pub config: RunConfig,
    /// Ranked by benchmark loss.
    pub candidates: Vec<Candidate>,
    pub render: RenderModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assemblies: Option<Vec<AssemblyEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ga_history: Option<Vec<GenerationStats>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<usize>,
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("cancelled")]
    Cancelled,
    #[error("{0}")]
    Failed(String),
}

impl From<ConfigError> for JobError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => JobError::Failed(e.to_string()),
            _ => JobError::Invalid(e.to_string()),
        }
    }
}

impl From<SolverError> for JobError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Cancelled => JobError::Cancelled,
            SolverError::InvalidConfig(_) | SolverError::Scene(_) | SolverError::Kinematics(_) => {
                JobError::Invalid(e.to_string())
            }
            _ => JobError::Failed(e.to_string()),
        }
    }
}

impl From<SearchError> for JobError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Solver(s) => s.into(),
            SearchError::SpaceTooLarge { .. } | SearchError::InvalidConfig(_) => JobError::Invalid(e.to_string()),
            _ => JobError::Failed(e.to_string()),
        }
    }
}

/// Checks everything that can be checked before a job is queued.
pub fn validate_request(req: &JobRequest) -> Result<(), JobError> {
    req.config.validate()?;
    match req.kind {
        JobKind::Evaluate if req.params.is_none() => Err(JobError::Invalid("evaluate needs `params`".into())),
        JobKind::BruteForce | JobKind::Ga if req.config.mode != DesignMode::Modular => {
            Err(JobError::Invalid("assembly search requires modular mode".into()))
        }
        _ => Ok(()),
    }
}

/// Runs a request against a scene. The master seed is propagated first.
pub fn execute(req: &JobRequest, scene: &Scene, progress: &dyn Progress) -> Result<JobResult, JobError> {
    validate_request(req)?;
    scene.validate().map_err(|e| JobError::Invalid(e.to_string()))?;
    let config = req.config.clone().resolved();
    let catalog = config.load_catalog()?;
    let modular = |mode: DesignMode| (mode == DesignMode::Modular).then_some(&catalog);
    let (w, solver) = (&config.weights, &config.solver);

    let mut assemblies = None;
    let mut ga_history = None;
    let mut evaluations = None;
    let candidates = match req.kind {
        JobKind::Design => design_task(scene, config.mode, config.dof, modular(config.mode), solver, w, progress)?,
        JobKind::Evaluate => {
            let params = req.params.as_ref().expect("validated");
            let mode = params.mode();
            vec![score_design(scene, params, modular(mode), req.ik.as_deref(), solver, w)?]
        }
        JobKind::BruteForce => {
            let ev = AssemblyEvaluator::new(scene, &catalog, solver, w);
            let bf = brute_force(&ev, config.dof, config.brute_force_cap, progress)?;
            assemblies = Some(
                bf.candidates
                    .iter()
                    .map(|c| AssemblyEntry {
                        slots: match &c.params {
                            DesignParams::Modular { slots } => slots.clone(),
                            _ => unreachable!("assemblies are modular"),
                        },
                        benchmark_loss: c.benchmark_loss,
                        score: c.score.unwrap_or(0.0),
                    })
                    .collect(),
            );
            evaluations = Some(bf.candidates.len());
            let mut ranked = bf.candidates;
            rank_candidates(&mut ranked);
            ranked.truncate(solver.n_candidates);
            ranked
        }
        JobKind::Ga => {
            let ev = AssemblyEvaluator::new(scene, &catalog, solver, w);
            let r = genetic_search(&ev, config.dof, &config.ga, progress)?;
            ga_history = Some(r.history);
            evaluations = Some(r.evaluations);
            vec![r.best]
        }
    };
    let render = render_model(scene, &candidates, Some(&catalog)).map_err(|e| JobError::Failed(e.to_string()))?;
    Ok(JobResult { kind: req.kind, config, candidates, render, assemblies, ga_history, evaluations })
}

/// Canonical bytes of a result; the store addresses results by their hash.
pub fn encode_result(result: &JobResult) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(result).expect("result serializes");
    bytes.push(b'\n');
    bytes
}
