//! `morphforge` command line: scene generation, single-task design,
//! assembly search baselines, benchmark reproduction and the HTTP service.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use morphforge::config::{ConfigError, ConfigFormat, RunConfig};
use morphforge::kinematics::{DesignMode, DesignParams, JointVector};
use morphforge::scene::{load_scene, sample_cluttered_task, save_scene, Scene, TaskSpec};
use morphforge::search::{run_benchmark, write_report, BenchConfig, Method, SearchError};
use morphforge::solver::{stream_rng, Progress, ProgressEvent, Stage};
use morphforge_service::jobs::{encode_result, execute, JobError, JobKind, JobRequest, JobResult};
use morphforge_service::{serve, ServiceConfig};

const STREAM_SCENE_GEN: u64 = 21;

#[derive(Parser)]
#[command(name = "morphforge", version, about = "Task-tailored manipulator design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene utilities.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Design and rank candidate robots for one scene.
    Design(TaskArgs),
    /// Score a given design against a scene.
    Evaluate(EvaluateArgs),
    /// Enumerate every modular assembly.
    BruteForce(TaskArgs),
    /// Genetic search over modular assemblies.
    Ga(TaskArgs),
    /// Run the search methods on seeded cluttered tasks and write a report.
    Bench(BenchArgs),
    /// Serve the HTTP API. Reads MF_DATA_DIR, MF_BIND_ADDR and MF_WORKERS.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Sample a cluttered task: goals in a ball around the base, spherical obstacles.
    Gen(SceneGenArgs),
}

#[derive(Args)]
struct SceneGenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    goals: usize,
    #[arg(long, default_value_t = 8)]
    obstacles: usize,
    /// Goals and obstacles lie within this distance of the base (m).
    #[arg(long, default_value_t = 1.2)]
    max_dist: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags shared by every command that builds a [`RunConfig`].
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML or JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<DesignMode>,
    #[arg(long)]
    dof: Option<usize>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    ik_starts: Option<usize>,
    #[arg(long)]
    adam_steps: Option<usize>,
    /// Module catalog JSON; the bundled catalog when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TaskArgs {
    /// Scene JSON.
    scene: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    scene: PathBuf,
    /// Design parameters JSON.
    #[arg(long, conflicts_with = "from_result", required_unless_present = "from_result")]
    params: Option<PathBuf>,
    /// Joint vectors per goal (JSON array); solved by IK when absent.
    #[arg(long, requires = "params")]
    ik: Option<PathBuf>,
    /// Take design and joint vectors from a candidate of an earlier result.
    #[arg(long)]
    from_result: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "from_result")]
    rank: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Number of seeded tasks, starting at the master seed.
    #[arg(long, default_value_t = 10)]
    tasks: usize,
    /// Comma-separated: bf, ga, random, pipeline.
    #[arg(long, value_delimiter = ',', default_value = "bf,ga,random,pipeline")]
    methods: Vec<Method>,
    #[arg(long)]
    goals: Option<usize>,
    #[arg(long)]
    obstacles: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Failure with its exit code: 2 for invalid input, 3 for runtime errors.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<JobError> for Failure {
    fn from(e: JobError) -> Self {
        match e {
            JobError::Invalid(m) => Failure::Invalid(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::InvalidConfig(_) | SearchError::SpaceTooLarge { .. } => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read_input(path)?).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn read_scene(path: &Path) -> Result<Scene, Failure> {
    load_scene(&read_input(path)?).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

impl RunArgs {
    /// The config file (or defaults) with flags applied and the seed propagated.
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.dof {
            c.dof = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.candidates {
            c.solver.n_candidates = v;
        }
        if let Some(v) = self.ik_starts {
            c.solver.ik_starts_per_goal = v;
        }
        if let Some(v) = self.adam_steps {
            c.solver.adam_steps = v;
        }
        if let Some(v) = &self.catalog {
            c.catalog = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        c.validate()?;
        Ok(c.resolved())
    }

    fn init_threads(&self) -> Result<(), Failure> {
        match self.threads {
            Some(0) => Err(Failure::Invalid("--threads must be at least 1".into())),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Runtime(e.to_string())),
            None => Ok(()),
        }
    }
}

/// Prints the resolved config to stderr and, with an output directory,
/// saves it as `config.toml` so the run can be repeated with `--config`.
fn echo_config(c: &RunConfig) -> Result<(), Failure> {
    let text = c.to_text(ConfigFormat::Toml);
    eprintln!("seed = {}\n--- resolved config ---\n{text}---", c.seed);
    if let Some(dir) = &c.out {
        write_output(&dir.join("config.toml"), text.as_bytes())?;
    }
    Ok(())
}

/// Stage changes on stderr.
struct StderrProgress(Mutex<Option<Stage>>);

impl Progress for StderrProgress {
    fn report(&self, e: ProgressEvent) {
        let mut last = self.0.lock().expect("poisoned");
        if *last != Some(e.stage) {
            *last = Some(e.stage);
            eprintln!("[{:?}] {}/{}", e.stage, e.done, e.total);
        }
    }
}

fn run_job(kind: JobKind, scene_path: &Path, run: &RunArgs, params: Option<DesignParams>, ik: Option<Vec<JointVector>>) -> Result<(), Failure> {
    run.init_threads()?;
    let config = run.resolve()?;
    echo_config(&config)?;
    let scene = read_scene(scene_path)?;
    let out = config.out.clone();
    // Where a result is written is not part of it.
    let request = JobRequest {
        kind,
        scene_id: scene_path.display().to_string(),
        config: RunConfig { out: None, ..config },
        params,
        ik,
    };
    let result = execute(&request, &scene, &StderrProgress(Mutex::new(None)))?;
    summarize(&result);
    let bytes = encode_result(&result);
    match out {
        Some(dir) => {
            let path = dir.join("result.json");
            write_output(&path, &bytes)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn summarize(r: &JobResult) {
    for (rank, c) in r.candidates.iter().enumerate() {
        eprintln!(
            "#{rank}: loss {:.6}  solved {}/{}  hardware {:.3}",
            c.benchmark_loss,
            c.solved_goals,
            c.goal_errors.len(),
            c.loss.hardware
        );
    }
}

fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let (params, ik) = match (&args.params, &args.from_result) {
        (Some(p), _) => (read_json::<DesignParams>(p)?, args.ik.as_deref().map(read_json).transpose()?),
        (None, Some(r)) => {
            let result: JobResult = read_json(r)?;
            let c = result.candidates.into_iter().nth(args.rank).ok_or_else(|| {
                Failure::Invalid(format!("{} has no candidate of rank {}", r.display(), args.rank))
            })?;
            (c.params, Some(c.ik))
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut run = args.run.clone();
    run.mode.get_or_insert(params.mode());
    run.dof.get_or_insert(params.dof());
    run_job(JobKind::Evaluate, &args.scene, &run, Some(params), ik)
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    args.run.init_threads()?;
    // Desk-scale default: 625 assemblies instead of the full design space.
    let mut run = args.run.clone();
    if run.config.is_none() {
        run.dof.get_or_insert(4);
    }
    let mut config = run.resolve()?;
    config.mode = DesignMode::Modular;
    config.out.get_or_insert_with(|| PathBuf::from("bench-report"));
    echo_config(&config)?;
    if args.tasks == 0 {
        return Err(Failure::Invalid("--tasks must be at least 1".into()));
    }
    let mut cfg = BenchConfig {
        task_seeds: (0..args.tasks as u64).map(|i| config.seed.wrapping_add(i)).collect(),
        methods: args.methods.clone(),
        dof: config.dof,
        solver: config.solver,
        ga: config.ga.clone(),
        weights: config.weights.clone(),
        brute_force_cap: config.brute_force_cap,
        ..BenchConfig::default()
    };
    if let Some(n) = args.goals {
        cfg.task.n_goals = n;
    }
    if let Some(n) = args.obstacles {
        cfg.task.n_obstacles = n;
    }
    let catalog = config.load_catalog()?;
    let report = run_benchmark(&cfg, &catalog, &StderrProgress(Mutex::new(None)))?;
    let dir = config.out.expect("set above");
    write_report(&report, &dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    eprint!("{}", report.table());
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn scene_gen(args: &SceneGenArgs) -> Result<(), Failure> {
    let spec = TaskSpec { n_goals: args.goals, n_obstacles: args.obstacles, max_dist: args.max_dist, ..TaskSpec::default() };
    eprintln!("seed = {}", args.seed);
    let mut scene = sample_cluttered_task(&spec, &mut stream_rng(args.seed, &[STREAM_SCENE_GEN]))
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    scene.seed = Some(args.seed);
    let bytes = save_scene(&scene);
    match &args.out {
        Some(path) => write_output(path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn serve_cmd(args: &ServeArgs) -> Result<(), Failure> {
    let mut cfg = ServiceConfig::from_env().map_err(Failure::Invalid)?;
    if let Some(v) = args.bind {
        cfg.bind = v;
    }
    if let Some(v) = &args.data_dir {
        cfg.data_dir = v.clone();
    }
    match args.workers {
        Some(0) => return Err(Failure::Invalid("--workers must be at least 1".into())),
        Some(n) => cfg.workers = n,
        None => {}
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(serve(cfg)).map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Scene(SceneCommand::Gen(a)) => scene_gen(a),
        Command::Design(a) => run_job(JobKind::Design, &a.scene, &a.run, None, None),
        Command::Evaluate(a) => evaluate(a),
        Command::BruteForce(a) => run_job(JobKind::BruteForce, &a.scene, &a.run, None, None),
        Command::Ga(a) => run_job(JobKind::Ga, &a.scene, &a.run, None, None),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
