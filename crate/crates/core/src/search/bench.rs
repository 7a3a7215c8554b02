use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    brute_force, genetic_search, random_search, AssemblyEvaluator, BruteForceResult, GaConfig, GenerationStats,
    SearchError, SearchObjective, DEFAULT_BRUTE_FORCE_CAP,
};
use crate::kinematics::{DesignMode, DesignParams, ModuleCatalog};
use crate::objective::LossWeights;
use crate::scene::{sample_cluttered_task, Scene, TaskSpec};
use crate::solver::{derive_seed, design_task, stream_rng, Candidate, Progress, SolverConfig};

pub const HISTOGRAM_BINS: usize = 10;
const TOP_FRACTION: f64 = 0.1;
const STREAM_TASK: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BruteForce,
    Ga,
    Random,
    Pipeline,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bf" | "brute_force" | "brute-force" => Ok(Method::BruteForce),
            "ga" | "genetic" => Ok(Method::Ga),
            "random" | "rs" => Ok(Method::Random),
            "pipeline" | "design" => Ok(Method::Pipeline),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::BruteForce => "brute_force",
            Method::Ga => "ga",
            Method::Random => "random",
            Method::Pipeline => "pipeline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub task_seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub dof: usize,
    pub task: TaskSpec,
    pub solver: SolverConfig,
    pub ga: GaConfig,
    pub weights: LossWeights,
    /// Random-search budget; defaults to the GA's distinct evaluations.
    pub random_budget: Option<usize>,
    pub brute_force_cap: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            task_seeds: (0..10).collect(),
            methods: vec![Method::BruteForce, Method::Ga, Method::Random, Method::Pipeline],
            dof: 4,
            task: TaskSpec { n_goals: 4, n_obstacles: 4, base_clearance: 0.15, ..TaskSpec::default() },
            solver: SolverConfig::default(),
            ga: GaConfig { population: 32, generations: 30, ..GaConfig::default() },
            weights: LossWeights::default(),
            random_budget: None,
            brute_force_cap: DEFAULT_BRUTE_FORCE_CAP,
        }
    }
}

impl BenchConfig {
    /// The scene of one benchmark task.
    pub fn scene(&self, task_seed: u64) -> Result<Scene, SearchError> {
        let mut scene = sample_cluttered_task(&self.task, &mut stream_rng(task_seed, &[STREAM_TASK]))?;
        scene.seed = Some(task_seed);
        Ok(scene)
    }

    fn validate(&self) -> Result<(), SearchError> {
        if self.methods.is_empty() || self.task_seeds.is_empty() {
            return Err(SearchError::InvalidConfig("need at least one method and one task".into()));
        }
        if self.dof == 0 {
            return Err(SearchError::InvalidConfig("dof must be at least 1".into()));
        }
        if self.random_budget == Some(0) {
            return Err(SearchError::InvalidConfig("random_budget must be at least 1".into()));
        }
        self.solver.validate()?;
        self.ga.validate()
    }
}

/// Order statistics of the enumerated benchmark losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub min: f64,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub max: f64,
    pub mean: f64,
}

impl DistributionStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
        };
        DistributionStats {
            min: v[0],
            p10: q(0.1),
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            p90: q(0.9),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub params: DesignParams,
    pub benchmark_loss: f64,
    pub fitness: f64,
    /// Normalized against the enumeration when brute force ran.
    pub score: Option<f64>,
    /// Enumerated assemblies with a strictly lower loss.
    pub strictly_better: Option<usize>,
    pub percentile: Option<f64>,
    pub in_top10: Option<bool>,
    pub solved_goals: usize,
    pub task_solved: bool,
    pub evaluations: usize,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyScore {
    pub index: usize,
    pub slots: Vec<usize>,
    pub benchmark_loss: f64,
    pub fitness: f64,
    pub score: f64,
    pub solved_goals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub seed: u64,
    pub n_goals: usize,
    pub n_assemblies: Option<usize>,
    pub distribution: Option<DistributionStats>,
    /// Counts of normalized scores in equal-width bins over [0, 1].
    pub histogram: Option<Vec<usize>>,
    pub methods: Vec<MethodResult>,
    pub ga_history: Option<Vec<GenerationStats>>,
    /// GA best fitness ≤ random-search best fitness at equal evaluations.
    pub ga_beats_random: Option<bool>,
    #[serde(skip)]
    pub scores: Vec<AssemblyScore>,
}

impl TaskReport {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub tasks: usize,
    pub in_top10: usize,
    pub top10_fraction: Option<f64>,
    pub mean_score: Option<f64>,
    pub solved_tasks: usize,
    pub solved_goals: usize,
    pub total_goals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchConfig,
    pub tasks: Vec<TaskReport>,
    pub aggregate: Vec<MethodAggregate>,
    pub ga_beats_random: Option<usize>,
}

impl BenchmarkReport {
    pub fn aggregate_for(&self, m: Method) -> Option<&MethodAggregate> {
        self.aggregate.iter().find(|a| a.method == m)
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8}  {:<12} {:>10} {:>7} {:>7} {:>6} {:>7} {:>6}", "task", "method", "loss", "score", "pctl", "top10", "solved", "evals");
        for t in &self.tasks {
            for r in &t.methods {
                let opt = |x: Option<f64>, p: usize| x.map_or("-".to_string(), |v| format!("{v:.p$}"));
                let _ = writeln!(
                    s,
                    "{:>8}  {:<12} {:>10.4} {:>7} {:>7} {:>6} {:>4}/{:<2} {:>6}",
                    t.seed,
                    r.method.to_string(),
                    r.benchmark_loss,
                    opt(r.score, 3),
                    opt(r.percentile, 1),
                    r.in_top10.map_or("-", |b| if b { "yes" } else { "no" }),
                    r.solved_goals,
                    t.n_goals,
                    r.evaluations
                );
            }
        }
        for a in &self.aggregate {
            let _ = writeln!(
                s,
                "{:<12} top10 {}/{}  mean score {}  solved tasks {}/{}  solved goals {}/{}",
                a.method.to_string(),
                a.in_top10,
                a.tasks,
                a.mean_score.map_or("-".into(), |v| format!("{v:.3}")),
                a.solved_tasks,
                a.tasks,
                a.solved_goals,
                a.total_goals
            );
        }
        if let Some(k) = self.ga_beats_random {
            let _ = writeln!(s, "ga ≤ random at equal budget on {k}/{} tasks", self.tasks.len());
        }
        s
    }
}

fn method_result(
    method: Method,
    c: &Candidate,
    bf: Option<&BruteForceResult>,
    n_goals: usize,
    w: &LossWeights,
    evaluations: usize,
    started: Instant,
) -> MethodResult {
    let strictly_better = bf.map(|b| b.strictly_better(c.benchmark_loss));
    let n = bf.map_or(0, |b| b.candidates.len());
    MethodResult {
        method,
        params: c.params.clone(),
        benchmark_loss: c.benchmark_loss,
        fitness: c.loss.fitness(w),
        score: bf.map(|b| b.score(c.benchmark_loss)),
        strictly_better,
        percentile: strictly_better.map(|k| 100.0 * (1.0 - k as f64 / n as f64)),
        in_top10: bf.map(|b| b.in_top_fraction(c.benchmark_loss, TOP_FRACTION)),
        solved_goals: c.solved_goals,
        task_solved: c.solved_goals == n_goals,
        evaluations,
        wall_clock_s: started.elapsed().as_secs_f64(),
    }
}

fn run_task(cfg: &BenchConfig, catalog: &ModuleCatalog, seed: u64, progress: &dyn Progress) -> Result<TaskReport, SearchError> {
    let scene = cfg.scene(seed)?;
    let n_goals = scene.goals.len();
    let w = &cfg.weights;
    let solver = SolverConfig { rng_seed: seed, ..cfg.solver };
    let evaluator = AssemblyEvaluator::new(&scene, catalog, &solver, w);
    let has = |m: Method| cfg.methods.contains(&m);
    let mut methods = Vec::new();

    let mut bf = None;
    if has(Method::BruteForce) {
        let t = Instant::now();
        let r = brute_force(&evaluator, cfg.dof, cfg.brute_force_cap, progress)?;
        let best = r.best().expect("non-empty enumeration").clone();
        methods.push(method_result(Method::BruteForce, &best, Some(&r), n_goals, w, r.candidates.len(), t));
        bf = Some(r);
    }

    let mut ga_history = None;
    let mut ga_fit = None;
    let mut ga_evals = None;
    if has(Method::Ga) {
        let t = Instant::now();
        let ga = GaConfig { rng_seed: derive_seed(cfg.ga.rng_seed, &[seed]), ..cfg.ga };
        let r = genetic_search(&evaluator, cfg.dof, &ga, progress)?;
        methods.push(method_result(Method::Ga, &r.best, bf.as_ref(), n_goals, w, r.evaluations, t));
        ga_fit = Some(r.best_fitness);
        ga_evals = Some(r.evaluations);
        ga_history = Some(r.history);
    }

    let mut ga_beats_random = None;
    if has(Method::Random) {
        let t = Instant::now();
        let budget = cfg.random_budget.or(ga_evals).unwrap_or(cfg.ga.population * (cfg.ga.generations + 1));
        let r = random_search(&evaluator, cfg.dof, budget, derive_seed(cfg.ga.rng_seed, &[seed, 1]), SearchObjective::Fitness)?;
        methods.push(method_result(Method::Random, &r.best, bf.as_ref(), n_goals, w, r.evaluations, t));
        ga_beats_random = ga_fit.map(|g| g <= r.best_value);
    }

    if has(Method::Pipeline) {
        let t = Instant::now();
        let cands = design_task(&scene, DesignMode::Modular, cfg.dof, Some(catalog), &solver, w, progress)?;
        let evaluations = solver.n_candidates * solver.seed_pool_factor;
        methods.push(method_result(Method::Pipeline, &cands[0], bf.as_ref(), n_goals, w, evaluations, t));
    }

    let (n_assemblies, distribution, histogram, scores) = match &bf {
        Some(b) => {
            let losses: Vec<f64> = b.candidates.iter().map(|c| c.benchmark_loss).collect();
            let norm = b.scores();
            let mut hist = vec![0; HISTOGRAM_BINS];
            for s in &norm {
                hist[((s * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1;
            }
            let scores = b
                .candidates
                .iter()
                .zip(&norm)
                .map(|(c, &score)| AssemblyScore {
                    index: c.provenance.candidate_index,
                    slots: match &c.params {
                        DesignParams::Modular { slots } => slots.clone(),
                        _ => Vec::new(),
                    },
                    benchmark_loss: c.benchmark_loss,
                    fitness: c.loss.fitness(w),
                    score,
                    solved_goals: c.solved_goals,
                })
                .collect();
            (Some(b.candidates.len()), Some(DistributionStats::of(&losses)), Some(hist), scores)
        }
        None => (None, None, None, Vec::new()),
    };
    Ok(TaskReport { seed, n_goals, n_assemblies, distribution, histogram, methods, ga_history, ga_beats_random, scores })
}

/// Runs every method on every seeded task. Tasks run in sequence; the
/// evaluations inside a task run in parallel.
pub fn run_benchmark(cfg: &BenchConfig, catalog: &ModuleCatalog, progress: &dyn Progress) -> Result<BenchmarkReport, SearchError> {
    cfg.validate()?;
    let tasks = cfg
        .task_seeds
        .iter()
        .map(|&seed| run_task(cfg, catalog, seed, progress))
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = cfg
        .methods
        .iter()
        .map(|&m| {
            let rs: Vec<&MethodResult> = tasks.iter().filter_map(|t| t.method(m)).collect();
            let scores: Vec<f64> = rs.iter().filter_map(|r| r.score).collect();
            let top: Vec<bool> = rs.iter().filter_map(|r| r.in_top10).collect();
            MethodAggregate {
                method: m,
                tasks: rs.len(),
                in_top10: top.iter().filter(|&&b| b).count(),
                top10_fraction: (!top.is_empty()).then(|| top.iter().filter(|&&b| b).count() as f64 / top.len() as f64),
                mean_score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                solved_tasks: rs.iter().filter(|r| r.task_solved).count(),
                solved_goals: rs.iter().map(|r| r.solved_goals).sum(),
                total_goals: tasks.iter().filter(|t| t.method(m).is_some()).map(|t| t.n_goals).sum(),
            }
        })
        .collect();
    let ga_beats_random = tasks
        .iter()
        .map(|t| t.ga_beats_random)
        .collect::<Option<Vec<bool>>>()
        .map(|v| v.iter().filter(|&&b| b).count());
    Ok(BenchmarkReport { config: cfg.clone(), tasks, aggregate, ga_beats_random })
}

/// Writes `report.json`, `summary.csv` and `task_<seed>/scores.csv`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<(), SearchError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    let mut summary = String::from(
        "task_seed,method,benchmark_loss,fitness,score,percentile,in_top10,solved_goals,n_goals,task_solved,evaluations,wall_clock_s\n",
    );
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for t in &report.tasks {
        for r in &t.methods {
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
                t.seed,
                r.method,
                r.benchmark_loss,
                r.fitness,
                opt(r.score),
                opt(r.percentile),
                r.in_top10.map_or(String::new(), |b| b.to_string()),
                r.solved_goals,
                t.n_goals,
                r.task_solved,
                r.evaluations,
                r.wall_clock_s
            );
        }
        if !t.scores.is_empty() {
            let sub = dir.join(format!("task_{}", t.seed));
            std::fs::create_dir_all(&sub)?;
            let mut csv = String::from("index,slots,benchmark_loss,fitness,score,solved_goals\n");
            for a in &t.scores {
                let slots: Vec<String> = a.slots.iter().map(usize::to_string).collect();
                let _ = writeln!(csv, "{},{},{},{},{},{}", a.index, slots.join("-"), a.benchmark_loss, a.fitness, a.score, a.solved_goals);
            }
            std::fs::write(sub.join("scores.csv"), csv)?;
        }
    }
    std::fs::write(dir.join("summary.csv"), summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::NoProgress;

    fn small() -> BenchConfig {
        BenchConfig {
            task_seeds: vec![1, 2],
            methods: vec![Method::BruteForce, Method::Pipeline],
            dof: 2,
            task: TaskSpec { n_goals: 2, n_obstacles: 2, max_dist: 0.6, ..TaskSpec::default() },
            solver: SolverConfig { n_candidates: 3, ik_starts_per_goal: 2, ik_max_steps: 20, adam_steps: 10, ..SolverConfig::default() },
            ga: GaConfig { population: 4, generations: 2, ..GaConfig::default() },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn order_statistics() {
        let d = DistributionStats::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((d.min, d.median, d.max, d.mean), (1.0, 3.0, 5.0, 3.0));
        assert!((d.p10 - 1.4).abs() < 1e-12 && (d.p75 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_task_report_structure() {
        let cat = ModuleCatalog::default_catalog();
        let r = run_benchmark(&small(), &cat, &NoProgress).unwrap();
        assert_eq!(r.tasks.len(), 2);
        for t in &r.tasks {
            assert_eq!(t.n_assemblies, Some(25));
            assert_eq!(t.histogram.as_ref().unwrap().iter().sum::<usize>(), 25);
            let p = t.method(Method::Pipeline).unwrap();
            assert!(p.score.unwrap() <= 1.0 && p.in_top10.is_some());
            assert_eq!(t.method(Method::BruteForce).unwrap().score, Some(1.0));
        }
        for a in &r.aggregate {
            assert!(a.solved_tasks <= a.tasks);
        }
        assert!(r.table().contains("pipeline"));

        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        assert!(dir.path().join("report.json").exists());
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1 + 4);
        let scores = std::fs::read_to_string(dir.path().join("task_1/scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 26);
        let back: BenchmarkReport = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.tasks.len(), 2);
    }

    #[test]
    fn methods_parse() {
        let m: Vec<Method> = "bf,ga,pipeline,random".split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(m, vec![Method::BruteForce, Method::Ga, Method::Pipeline, Method::Random]);
        assert!("nope".parse::<Method>().is_err());
    }
}
