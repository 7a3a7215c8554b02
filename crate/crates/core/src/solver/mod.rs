//! Per-task design pipeline: candidate seeding, multi-start damped
//! least-squares IK, Adam co-optimization and ranking.

mod adam;
mod co_opt;
mod ik;
mod pipeline;
mod seed;

pub use adam::Adam;
pub use co_opt::{co_optimize, CoOptResult};
pub use ik::{ik_error, ik_refine, multi_start_ik, IkSolution};
pub use pipeline::{design_task, evaluate_assembly, rank_candidates, refine_design, score_design};
pub use seed::{random_design, seed_candidates};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::GradError;
use crate::kinematics::{DesignParams, JointVector, KinematicsError};
use crate::objective::{GoalError, LossBreakdown, ObjectiveError};
use crate::scene::SceneError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("sampling exhausted: {0}")]
    SamplingExhausted(String),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_candidates: usize,
    pub ik_starts_per_goal: usize,
    pub ik_max_steps: usize,
    pub adam_steps: usize,
    pub lr_ik: f64,
    pub lr_params: f64,
    /// Initial damping of the least-squares IK step (m²).
    pub dls_damping: f64,
    pub rng_seed: u64,
    /// Minimum pairwise L1 distance between seeded designs, per joint.
    pub seed_l1_floor: f64,
    /// Designs drawn and screened per seeded candidate.
    pub seed_pool_factor: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_candidates: 8,
            ik_starts_per_goal: 4,
            ik_max_steps: 50,
            adam_steps: 200,
            lr_ik: 0.1,
            lr_params: 0.01,
            dls_damping: 1e-4,
            rng_seed: 0,
            seed_l1_floor: 0.2,
            seed_pool_factor: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.into()));
        if self.n_candidates == 0 || self.ik_starts_per_goal == 0 || self.ik_max_steps == 0 {
            return bad("counts must be at least 1");
        }
        if self.seed_pool_factor == 0 {
            return bad("seed_pool_factor must be at least 1");
        }
        if !(self.lr_ik > 0.0 && self.lr_params > 0.0 && self.dls_damping > 0.0) {
            return bad("rates and damping must be positive");
        }
        if !(self.seed_l1_floor >= 0.0) {
            return bad("seed_l1_floor must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub candidate_index: usize,
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: DesignParams,
    /// Selected joint vector per goal.
    pub ik: Vec<JointVector>,
    /// Other refined solutions per goal, best first.
    pub alternates: Vec<Vec<JointVector>>,
    pub loss: LossBreakdown,
    pub benchmark_loss: f64,
    pub score: Option<f64>,
    pub solved_goals: usize,
    pub goal_errors: Vec<GoalError>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Seeding,
    Ik,
    CoOptimize,
    Ranking,
    Search,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub stage: Stage,
    /// Finished units of work within the run.
    pub done: usize,
    pub total: usize,
    pub best_loss: Option<f64>,
}

/// Observer for long runs. Cancellation is honored at stage boundaries.
pub trait Progress: Sync {
    fn report(&self, _event: ProgressEvent) {}
    fn cancelled(&self) -> bool {
        false
    }
}

pub struct NoProgress;

impl Progress for NoProgress {}

pub(crate) fn check_cancel(progress: &dyn Progress) -> Result<(), SolverError> {
    if progress.cancelled() {
        Err(SolverError::Cancelled)
    } else {
        Ok(())
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of an independent stream identified by `tags` under `seed`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |h, t| splitmix64(h ^ splitmix64(*t)))
}

pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stable hash of a design, so that the same design draws the same IK
/// starts no matter which method proposed it.
pub fn design_key(params: &DesignParams) -> u64 {
    let (tag, words): (u64, Vec<u64>) = match params {
        DesignParams::Free { rows } => (1, rows.iter().flat_map(|r| r.to_array().map(f64::to_bits)).collect()),
        DesignParams::Economic { rows } => (2, rows.iter().flat_map(|r| r.to_array().map(f64::to_bits)).collect()),
        DesignParams::Modular { slots } => (3, slots.iter().map(|&s| s as u64).collect()),
    };
    derive_seed(tag, &words)
}

pub(crate) const STREAM_SEEDING: u64 = 1;
pub(crate) const STREAM_IK: u64 = 2;
pub(crate) const STREAM_COOPT: u64 = 3;
