//! Assembly search over a module catalog: exhaustive enumeration, a genetic
//! algorithm, random search and the benchmark harness comparing them with
//! the design pipeline.

mod bench;
mod ga;

pub use bench::{
    run_benchmark, write_report, BenchConfig, BenchmarkReport, DistributionStats, Method, MethodAggregate,
    MethodResult, TaskReport, HISTOGRAM_BINS,
};
pub use ga::{crossover, genetic_search, mutate, tournament, GaConfig, GaResult, GenerationStats};

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{assembly_count, DesignParams, ModuleCatalog};
use crate::objective::{normalized_score, CollisionWorld, LossWeights};
use crate::scene::{Scene, SceneError};
use crate::solver::{check_cancel, refine_design, stream_rng, Candidate, Progress, ProgressEvent, SolverConfig, SolverError, Stage};

/// Largest assembly count `brute_force` accepts by default (5⁶ fits).
pub const DEFAULT_BRUTE_FORCE_CAP: u64 = 20_000;

const STREAM_RANDOM_SEARCH: u64 = 10;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("design space of {count} assemblies exceeds the cap of {cap}")]
    SpaceTooLarge { count: u128, cap: u64 },
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which loss a search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchObjective {
    /// Distance, collision and hardware terms.
    #[default]
    Benchmark,
    /// Distance and collision terms only.
    Fitness,
}

impl SearchObjective {
    pub fn of(&self, c: &Candidate, w: &LossWeights) -> f64 {
        match self {
            SearchObjective::Benchmark => c.benchmark_loss,
            SearchObjective::Fitness => c.loss.fitness(w),
        }
    }
}

/// Lexicographic index of an assembly, matching `enumerate_assemblies`.
pub fn assembly_index(slots: &[usize], n_choices: usize) -> usize {
    slots.iter().fold(0, |acc, &s| acc * n_choices + s)
}

/// Scores assemblies exactly like the pipeline scores candidates and
/// memoizes the results. Evaluation is a pure function of the slots, so the
/// cache may be shared between searches on the same task.
pub struct AssemblyEvaluator<'a> {
    scene: &'a Scene,
    world: CollisionWorld,
    catalog: &'a ModuleCatalog,
    cfg: SolverConfig,
    w: LossWeights,
    cache: Mutex<HashMap<Vec<usize>, Candidate>>,
}

impl<'a> AssemblyEvaluator<'a> {
    pub fn new(scene: &'a Scene, catalog: &'a ModuleCatalog, cfg: &SolverConfig, w: &LossWeights) -> Self {
        AssemblyEvaluator {
            scene,
            world: CollisionWorld::new(scene, w),
            catalog,
            cfg: *cfg,
            w: w.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn weights(&self) -> &LossWeights {
        &self.w
    }

    pub fn catalog(&self) -> &ModuleCatalog {
        self.catalog
    }

    /// Seeds the cache with already evaluated assemblies.
    pub fn prime(&self, cands: impl IntoIterator<Item = Candidate>) {
        let mut cache = self.cache.lock().expect("poisoned");
        for c in cands {
            if let DesignParams::Modular { slots } = &c.params {
                cache.insert(slots.clone(), c);
            }
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("poisoned").len()
    }

    fn evaluate_uncached(&self, slots: &[usize]) -> Result<Candidate, SolverError> {
        let params = DesignParams::Modular { slots: slots.to_vec() };
        let index = assembly_index(slots, self.catalog.len());
        refine_design(self.scene, &self.world, &params, Some(self.catalog), &self.cfg, &self.w, index)
    }

    pub fn evaluate(&self, slots: &[usize]) -> Result<Candidate, SolverError> {
        Ok(self.evaluate_many(&[slots.to_vec()])?.remove(0))
    }

    /// Evaluates the uncached genomes in parallel and returns one candidate
    /// per input, in input order.
    pub fn evaluate_many(&self, genomes: &[Vec<usize>]) -> Result<Vec<Candidate>, SolverError> {
        let missing: Vec<&Vec<usize>> = {
            let cache = self.cache.lock().expect("poisoned");
            let mut seen = std::collections::HashSet::new();
            genomes.iter().filter(|g| !cache.contains_key(*g) && seen.insert(*g)).collect()
        };
        let fresh: Vec<Candidate> =
            missing.par_iter().map(|g| self.evaluate_uncached(g)).collect::<Result<_, SolverError>>()?;
        let mut cache = self.cache.lock().expect("poisoned");
        for (g, c) in missing.into_iter().zip(fresh) {
            cache.insert(g.clone(), c);
        }
        Ok(genomes.iter().map(|g| cache[g].clone()).collect())
    }
}

/// Every assembly of a task, in enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub candidates: Vec<Candidate>,
    pub loss_min: f64,
    pub loss_max: f64,
}

impl BruteForceResult {
    /// Normalized score of a benchmark loss: 1 at the best assembly, 0 at the worst.
    pub fn score(&self, loss: f64) -> f64 {
        normalized_score(loss, self.loss_min, self.loss_max)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| self.score(c.benchmark_loss)).collect()
    }

    /// Number of enumerated assemblies with a strictly lower benchmark loss.
    pub fn strictly_better(&self, loss: f64) -> usize {
        self.candidates.iter().filter(|c| c.benchmark_loss < loss).count()
    }

    /// Whether a loss is within the best `fraction` of the enumeration.
    pub fn in_top_fraction(&self, loss: f64, fraction: f64) -> bool {
        (self.strictly_better(loss) as f64) < fraction * self.candidates.len() as f64
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.iter().min_by(|a, b| {
            a.benchmark_loss
                .total_cmp(&b.benchmark_loss)
                .then(a.provenance.candidate_index.cmp(&b.provenance.candidate_index))
        })
    }
}

/// Evaluates every assembly of `dof` catalog slots.
pub fn brute_force(
    evaluator: &AssemblyEvaluator<'_>,
    dof: usize,
    cap: u64,
    progress: &dyn Progress,
) -> Result<BruteForceResult, SearchError> {
    let catalog = evaluator.catalog();
    let count = assembly_count(catalog, dof);
    if count > u128::from(cap) {
        return Err(SearchError::SpaceTooLarge { count, cap });
    }
    if dof == 0 || catalog.is_empty() {
        return Err(SearchError::InvalidConfig("need at least one slot and one module".into()));
    }
    let genomes: Vec<Vec<usize>> = crate::kinematics::enumerate_assemblies(catalog, dof)
        .map(|d| match d {
            DesignParams::Modular { slots } => slots,
            _ => unreachable!(),
        })
        .collect();
    let total = genomes.len();
    // Chunks bound the progress granularity and the cancellation latency.
    let mut candidates = Vec::with_capacity(total);
    for chunk in genomes.chunks(64) {
        check_cancel(progress)?;
        candidates.extend(evaluator.evaluate_many(chunk)?);
        let best = candidates.iter().map(|c: &Candidate| c.benchmark_loss).fold(f64::INFINITY, f64::min);
        progress.report(ProgressEvent { stage: Stage::Search, done: candidates.len(), total, best_loss: Some(best) });
    }
    let loss_min = candidates.iter().map(|c| c.benchmark_loss).fold(f64::INFINITY, f64::min);
    let loss_max = candidates.iter().map(|c| c.benchmark_loss).fold(f64::NEG_INFINITY, f64::max);
    for c in &mut candidates {
        c.score = Some(normalized_score(c.benchmark_loss, loss_min, loss_max));
    }
    Ok(BruteForceResult { candidates, loss_min, loss_max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    pub best: Candidate,
    pub best_value: f64,
    pub evaluations: usize,
}

/// Evaluates `budget` distinct uniformly drawn assemblies and keeps the best
/// under `objective`. A budget at or above the space size enumerates it.
pub fn random_search(
    evaluator: &AssemblyEvaluator<'_>,
    dof: usize,
    budget: usize,
    seed: u64,
    objective: SearchObjective,
) -> Result<RandomSearchResult, SearchError> {
    if budget == 0 {
        return Err(SearchError::InvalidConfig("budget must be at least 1".into()));
    }
    let k = evaluator.catalog().len();
    if dof == 0 || k == 0 {
        return Err(SearchError::InvalidConfig("need at least one slot and one module".into()));
    }
    let space = assembly_count(evaluator.catalog(), dof);
    let genomes: Vec<Vec<usize>> = if (budget as u128) >= space {
        (0..space as usize).map(|i| genome_of(i, k, dof)).collect()
    } else {
        let mut rng = stream_rng(seed, &[STREAM_RANDOM_SEARCH]);
        if space <= u128::from(u32::MAX) {
            rand::seq::index::sample(&mut rng, space as usize, budget).into_iter().map(|i| genome_of(i, k, dof)).collect()
        } else {
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::with_capacity(budget);
            while out.len() < budget {
                let g: Vec<usize> = (0..dof).map(|_| rng.random_range(0..k)).collect();
                if seen.insert(g.clone()) {
                    out.push(g);
                }
            }
            out
        }
    };
    let cands = evaluator.evaluate_many(&genomes)?;
    let w = evaluator.weights();
    let evaluations = cands.len();
    let best = cands
        .into_iter()
        .min_by(|a, b| {
            objective
                .of(a, w)
                .total_cmp(&objective.of(b, w))
                .then(a.provenance.candidate_index.cmp(&b.provenance.candidate_index))
        })
        .expect("budget ≥ 1");
    Ok(RandomSearchResult { best_value: objective.of(&best, w), best, evaluations })
}

pub(crate) fn genome_of(mut index: usize, k: usize, dof: usize) -> Vec<usize> {
    let mut g = vec![0; dof];
    for s in g.iter_mut().rev() {
        *s = index % k;
        index /= k;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_cluttered_task, TaskSpec};
    use crate::solver::NoProgress;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn task(seed: u64) -> Scene {
        let spec = TaskSpec { n_goals: 2, n_obstacles: 2, max_dist: 0.6, ..TaskSpec::default() };
        sample_cluttered_task(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    pub(crate) fn fast_cfg() -> SolverConfig {
        SolverConfig { ik_starts_per_goal: 2, ik_max_steps: 20, adam_steps: 20, ..SolverConfig::default() }
    }

    #[test]
    fn index_round_trip() {
        for i in 0..125 {
            assert_eq!(assembly_index(&genome_of(i, 5, 3), 5), i);
        }
    }

    #[test]
    fn one_slot_brute_force() {
        let s = task(1);
        let cat = ModuleCatalog::default_catalog();
        let w = LossWeights::default();
        let ev = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
        let bf = brute_force(&ev, 1, DEFAULT_BRUTE_FORCE_CAP, &NoProgress).unwrap();
        assert_eq!(bf.candidates.len(), 5);
        let scores = bf.scores();
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(scores.contains(&1.0) && scores.contains(&0.0));
        assert_eq!(bf.best().unwrap().benchmark_loss, bf.loss_min);
        assert!(bf.in_top_fraction(bf.loss_min, 0.1));
    }

    #[test]
    fn space_cap_is_enforced() {
        let s = task(2);
        let cat = ModuleCatalog::default_catalog();
        let ev = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &LossWeights::default());
        let r = brute_force(&ev, 7, DEFAULT_BRUTE_FORCE_CAP, &NoProgress);
        assert!(matches!(r, Err(SearchError::SpaceTooLarge { count: 78125, .. })));
    }

    #[test]
    fn brute_force_is_reproducible() {
        let s = task(3);
        let cat = ModuleCatalog::default_catalog();
        let w = LossWeights::default();
        let run = || {
            let ev = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
            serde_json::to_string(&brute_force(&ev, 2, DEFAULT_BRUTE_FORCE_CAP, &NoProgress).unwrap()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn random_search_edges() {
        let s = task(4);
        let cat = ModuleCatalog::default_catalog();
        let w = LossWeights::default();
        let ev = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
        let one = random_search(&ev, 2, 1, 9, SearchObjective::Benchmark).unwrap();
        assert_eq!(one.evaluations, 1);
        assert_eq!(one, random_search(&ev, 2, 1, 9, SearchObjective::Benchmark).unwrap());

        let all = random_search(&ev, 2, 25, 9, SearchObjective::Benchmark).unwrap();
        let bf = brute_force(&ev, 2, DEFAULT_BRUTE_FORCE_CAP, &NoProgress).unwrap();
        assert_eq!(all.evaluations, 25);
        assert_eq!(all.best.params, bf.best().unwrap().params);
        assert_eq!(all.best_value, bf.loss_min);
    }

    #[test]
    fn cache_hits_match_fresh_evaluations() {
        let s = task(5);
        let cat = ModuleCatalog::default_catalog();
        let w = LossWeights::default();
        let a = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
        let x = a.evaluate(&[1, 3]).unwrap();
        assert_eq!(a.evaluate(&[1, 3]).unwrap(), x);
        let b = AssemblyEvaluator::new(&s, &cat, &fast_cfg(), &w);
        assert_eq!(b.evaluate(&[1, 3]).unwrap(), x);
        assert_eq!(a.cached(), 1);
    }
}
