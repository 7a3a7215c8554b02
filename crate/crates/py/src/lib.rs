//! Python module `morphforge`: scenes, designs, the design pipeline and
//! render models. Structured values cross the boundary as JSON strings.

use morphforge::config::RunConfig;
use morphforge::kinematics::{build_robot, forward_kinematics, DesignMode, DesignParams, DhRow, JointVector, ModuleCatalog};
use morphforge::objective::{collision_pair_loss as pair_loss, hardware_cost};
use morphforge::render::render_model;
use morphforge::scene::{load_scene, sample_cluttered_task, save_scene, Scene, TaskSpec};
use morphforge::solver::{design_task, score_design, stream_rng, Candidate, NoProgress};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

/// Same stream as `morphforge scene gen`, so equal seeds give equal scenes.
const STREAM_SCENE_GEN: u64 = 21;

fn invalid(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn catalog_for(mode: DesignMode, catalog: &ModuleCatalog) -> Option<&ModuleCatalog> {
    (mode == DesignMode::Modular).then_some(catalog)
}

#[pyclass(name = "Scene", module = "morphforge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: Scene,
}

#[pymethods]
impl PyScene {
    /// Parses and validates a scene document.
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        Ok(PyScene { inner: load_scene(json.as_bytes()).map_err(invalid)? })
    }

    /// A seeded cluttered task.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, goals = 8, obstacles = 8, max_dist = 1.2))]
    fn generate(seed: u64, goals: usize, obstacles: usize, max_dist: f64) -> PyResult<Self> {
        let spec = TaskSpec { n_goals: goals, n_obstacles: obstacles, max_dist, ..TaskSpec::default() };
        let mut inner = sample_cluttered_task(&spec, &mut stream_rng(seed, &[STREAM_SCENE_GEN])).map_err(invalid)?;
        inner.seed = Some(seed);
        Ok(PyScene { inner })
    }

    fn to_json(&self) -> String {
        String::from_utf8(save_scene(&self.inner)).expect("utf-8 json")
    }

    #[getter]
    fn goal_ids(&self) -> Vec<String> {
        self.inner.goals.iter().map(|g| g.id.clone()).collect()
    }

    #[getter]
    fn n_obstacles(&self) -> usize {
        self.inner.obstacles.len()
    }

    fn __repr__(&self) -> String {
        format!("Scene(goals={}, obstacles={})", self.inner.goals.len(), self.inner.obstacles.len())
    }
}

#[pyclass(name = "Design", module = "morphforge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDesign {
    inner: DesignParams,
}

impl PyDesign {
    fn checked(inner: DesignParams, catalog: &ModuleCatalog) -> PyResult<Self> {
        inner.validate(catalog_for(inner.mode(), catalog)).map_err(invalid)?;
        Ok(PyDesign { inner })
    }
}

#[pymethods]
impl PyDesign {
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        let inner: DesignParams = serde_json::from_str(json).map_err(invalid)?;
        Self::checked(inner, &ModuleCatalog::default_catalog())
    }

    /// Module indices into the bundled catalog, base to tip.
    #[staticmethod]
    fn modular(slots: Vec<usize>) -> PyResult<Self> {
        Self::checked(DesignParams::Modular { slots }, &ModuleCatalog::default_catalog())
    }

    /// DH rows as `(d, a, alpha)`.
    #[staticmethod]
    fn free(rows: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let rows = rows.into_iter().map(|(d, a, al)| DhRow::new(d, a, al)).collect();
        Self::checked(DesignParams::Free { rows }, &ModuleCatalog::default_catalog())
    }

    #[staticmethod]
    fn economic(rows: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let rows = rows.into_iter().map(|(d, a, al)| DhRow::new(d, a, al)).collect();
        Self::checked(DesignParams::Economic { rows }, &ModuleCatalog::default_catalog())
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode().to_string()
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    fn reach(&self) -> f64 {
        let cat = ModuleCatalog::default_catalog();
        self.inner.reach(catalog_for(self.inner.mode(), &cat))
    }

    fn hardware_cost(&self) -> f64 {
        let cat = ModuleCatalog::default_catalog();
        hardware_cost(&self.inner, catalog_for(self.inner.mode(), &cat))
    }

    /// End-effector position and rotation matrix (row-major) at `q`.
    fn forward_kinematics(&self, q: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        if q.len() != self.inner.dof() {
            return Err(invalid(format!("expected {} joint values, got {}", self.inner.dof(), q.len())));
        }
        let cat = ModuleCatalog::default_catalog();
        let robot = build_robot(&self.inner, catalog_for(self.inner.mode(), &cat)).map_err(invalid)?;
        let ee = forward_kinematics(&robot, &q).ee;
        let m = ee.rotation.matrix();
        let rot = (0..3).map(|i| (0..3).map(|j| m[(i, j)]).collect()).collect();
        Ok((ee.position.iter().copied().collect(), rot))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("design serializes")
    }

    fn __repr__(&self) -> String {
        format!("Design({})", self.to_json())
    }
}

#[pyclass(name = "Candidate", module = "morphforge", frozen)]
struct PyCandidate {
    inner: Candidate,
}

#[pymethods]
impl PyCandidate {
    #[getter]
    fn design(&self) -> PyDesign {
        PyDesign { inner: self.inner.params.clone() }
    }

    /// Full objective value.
    #[getter]
    fn loss(&self) -> f64 {
        self.inner.loss.total
    }

    #[getter]
    fn benchmark_loss(&self) -> f64 {
        self.inner.benchmark_loss
    }

    #[getter]
    fn solved_goals(&self) -> usize {
        self.inner.solved_goals
    }

    /// Joint vector per goal.
    #[getter]
    fn ik(&self) -> Vec<Vec<f64>> {
        self.inner.ik.iter().map(|q| q.0.clone()).collect()
    }

    #[getter]
    fn position_errors(&self) -> Vec<f64> {
        self.inner.goal_errors.iter().map(|e| e.position_m).collect()
    }

    /// Orientation error per goal in degrees, as its tolerance mode measures it.
    #[getter]
    fn angle_errors(&self) -> Vec<f64> {
        self.inner.goal_errors.iter().map(|e| e.angle_deg).collect()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("candidate serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "Candidate(mode={}, benchmark_loss={:.6}, solved={}/{})",
            self.inner.params.mode(),
            self.inner.benchmark_loss,
            self.inner.solved_goals,
            self.inner.goal_errors.len()
        )
    }
}

fn run_config(config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        Some(text) => serde_json::from_str(text).map_err(invalid),
        None => Ok(RunConfig::default()),
    }
}

/// Designs and ranks candidate robots for a scene. `config` is a JSON run
/// config; the keyword arguments override it.
#[pyfunction]
#[pyo3(signature = (scene, mode = None, dof = None, seed = None, candidates = None, config = None))]
fn design(
    py: Python<'_>,
    scene: &PyScene,
    mode: Option<&str>,
    dof: Option<usize>,
    seed: Option<u64>,
    candidates: Option<usize>,
    config: Option<&str>,
) -> PyResult<Vec<PyCandidate>> {
    let mut c = run_config(config)?;
    if let Some(m) = mode {
        c.mode = m.parse().map_err(invalid)?;
    }
    c.dof = dof.unwrap_or(c.dof);
    c.seed = seed.unwrap_or(c.seed);
    c.solver.n_candidates = candidates.unwrap_or(c.solver.n_candidates);
    c.validate().map_err(invalid)?;
    let c = c.resolved();
    let catalog = c.load_catalog().map_err(invalid)?;
    let scene = scene.inner.clone();
    let out = py.detach(|| {
        design_task(&scene, c.mode, c.dof, catalog_for(c.mode, &catalog), &c.solver, &c.weights, &NoProgress)
    });
    let cands = out.map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(cands.into_iter().map(|inner| PyCandidate { inner }).collect())
}

/// Scores a design on a scene, with given joint vectors or solved by IK.
#[pyfunction]
#[pyo3(signature = (scene, design, ik = None, config = None))]
fn evaluate(
    py: Python<'_>,
    scene: &PyScene,
    design: &PyDesign,
    ik: Option<Vec<Vec<f64>>>,
    config: Option<&str>,
) -> PyResult<PyCandidate> {
    let c = run_config(config)?;
    c.validate().map_err(invalid)?;
    let c = c.resolved();
    let catalog = c.load_catalog().map_err(invalid)?;
    let ik: Option<Vec<JointVector>> = ik.map(|v| v.into_iter().map(JointVector).collect());
    let (scene, params) = (scene.inner.clone(), design.inner.clone());
    let out = py.detach(|| {
        score_design(&scene, &params, catalog_for(params.mode(), &catalog), ik.as_deref(), &c.solver, &c.weights)
    });
    Ok(PyCandidate { inner: out.map_err(invalid)? })
}

/// Render model JSON (capsules, joint frames, per-goal errors) of ranked candidates.
#[pyfunction]
fn render(scene: &PyScene, candidates: Vec<PyRef<'_, PyCandidate>>) -> PyResult<String> {
    let cands: Vec<Candidate> = candidates.iter().map(|c| c.inner.clone()).collect();
    let model = render_model(&scene.inner, &cands, Some(&ModuleCatalog::default_catalog())).map_err(invalid)?;
    Ok(serde_json::to_string(&model).expect("render model serializes"))
}

/// Collision penalty of one pair at signed distance `sd` with threshold `t`.
#[pyfunction]
#[pyo3(signature = (sd, t = 0.12))]
fn collision_pair_loss(sd: f64, t: f64) -> f64 {
    pair_loss(sd, t)
}

/// The default run config as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
}

#[pymodule]
#[pyo3(name = "morphforge")]
fn morphforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyCandidate>()?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(collision_pair_loss, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
