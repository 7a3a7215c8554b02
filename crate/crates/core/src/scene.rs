//! Task definition: goals with tolerance modes, obstacles, workspace boxes,
//! the JSON scene document, and randomized task generation.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_distance, Capsule, Pose, Rotation, Shape, Sphere, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error ({id}): {reason}")]
    Validation { id: String, reason: String },
    #[error("sampling exhausted: {0}")]
    SamplingExhausted(String),
}

/// Maximum resamples for a single obstacle before giving up.
pub const MAX_OBSTACLE_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    #[default]
    FullPose,
    RotSymmetric,
    PositionOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub id: String,
    pub pose: Pose,
    pub tolerance: ToleranceMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub goals: Vec<Goal>,
    pub obstacles: Vec<Obstacle>,
    pub base_pose: Pose,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox {
    pub center: [f64; 3],
    /// Full side lengths of the box.
    pub extents: [f64; 3],
}

impl WorkspaceBox {
    /// The box used for workspace-coverage experiments: 0.8 × 1.0 × 0.8 m in
    /// front of the robot base.
    pub fn reference() -> Self {
        WorkspaceBox { center: [0.45, 0.0, 0.45], extents: [0.8, 1.0, 0.8] }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WorkspaceBox {
            center: self.center.map(|c| c * factor),
            extents: self.extents.map(|e| e * factor),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.extents[i] / 2.0 + 1e-12)
    }
}

impl Scene {
    pub fn goal_positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.goals.iter().map(|g| g.pose.position)
    }

    /// Largest distance between the robot base and any goal position.
    pub fn max_goal_distance(&self) -> f64 {
        self.goal_positions()
            .map(|p| (p - self.base_pose.position).norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.goals.is_empty() {
            return Err(SceneError::Validation { id: "goals".into(), reason: "scene needs at least one goal".into() });
        }
        let mut ids = HashSet::new();
        for g in &self.goals {
            if !ids.insert(g.id.as_str()) {
                return Err(SceneError::Validation { id: g.id.clone(), reason: "duplicate goal id".into() });
            }
            if !g.pose.position.iter().all(|x| x.is_finite()) {
                return Err(SceneError::Validation { id: g.id.clone(), reason: "non-finite goal position".into() });
            }
        }
        let mut ids = HashSet::new();
        for o in &self.obstacles {
            if !ids.insert(o.id.as_str()) {
                return Err(SceneError::Validation { id: o.id.clone(), reason: "duplicate obstacle id".into() });
            }
            let r = o.shape.radius();
            if !(r > 0.0 && r.is_finite()) {
                return Err(SceneError::Validation { id: o.id.clone(), reason: "radius must be positive".into() });
            }
        }
        for g in &self.goals {
            for o in &self.obstacles {
                if point_distance(&g.pose.position, &o.shape) <= 0.0 {
                    return Err(SceneError::Validation {
                        id: g.id.clone(),
                        reason: format!("goal position lies inside obstacle {}", o.id),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sphere decomposition of every obstacle.
    pub fn collision_spheres(&self, spacing: Option<f64>) -> Vec<Sphere> {
        self.obstacles
            .iter()
            .flat_map(|o| decompose_obstacle(o, spacing.unwrap_or_else(|| o.shape.radius())))
            .collect()
    }
}

// --- JSON document ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GoalDoc {
    id: String,
    position: [f64; 3],
    orientation6d: [f64; 6],
    #[serde(default)]
    tolerance: ToleranceMode,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ObstacleDoc {
    Sphere { id: String, center: [f64; 3], radius: f64 },
    Capsule { id: String, a: [f64; 3], b: [f64; 3], radius: f64 },
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    goals: Vec<GoalDoc>,
    #[serde(default)]
    obstacles: Vec<ObstacleDoc>,
    #[serde(default)]
    base_pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Serialize for Scene {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let doc = SceneDoc {
            goals: self
                .goals
                .iter()
                .map(|g| GoalDoc {
                    id: g.id.clone(),
                    position: arr(&g.pose.position),
                    orientation6d: g.pose.rotation.to_6d(),
                    tolerance: g.tolerance,
                })
                .collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| match o.shape {
                    Shape::Sphere(sp) => ObstacleDoc::Sphere { id: o.id.clone(), center: arr(&sp.center), radius: sp.radius },
                    Shape::Capsule(c) => {
                        ObstacleDoc::Capsule { id: o.id.clone(), a: arr(&c.a), b: arr(&c.b), radius: c.radius }
                    }
                })
                .collect(),
            base_pose: self.base_pose,
            seed: self.seed,
        };
        doc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = SceneDoc::deserialize(d)?;
        let mut goals = Vec::with_capacity(doc.goals.len());
        for g in doc.goals {
            let rotation = crate::geometry::rotation_from_6d(&g.orientation6d)
                .map_err(|e| serde::de::Error::custom(format!("goal {}: {e}", g.id)))?;
            goals.push(Goal { id: g.id, pose: Pose::new(Vec3::from(g.position), rotation), tolerance: g.tolerance });
        }
        let obstacles = doc
            .obstacles
            .into_iter()
            .map(|o| match o {
                ObstacleDoc::Sphere { id, center, radius } => {
                    Obstacle { id, shape: Shape::Sphere(Sphere { center: Vec3::from(center), radius }) }
                }
                ObstacleDoc::Capsule { id, a, b, radius } => {
                    Obstacle { id, shape: Shape::Capsule(Capsule::new(Vec3::from(a), Vec3::from(b), radius)) }
                }
            })
            .collect();
        Ok(Scene { goals, obstacles, base_pose: doc.base_pose, seed: doc.seed })
    }
}

/// Parses and validates a scene document.
pub fn load_scene(bytes: &[u8]) -> Result<Scene, SceneError> {
    let scene: Scene = serde_json::from_slice(bytes).map_err(|e| SceneError::Parse(e.to_string()))?;
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene) -> Vec<u8> {
    serde_json::to_vec_pretty(scene).expect("scene serialization is infallible")
}

// --- Sampling --------------------------------------------------------------

/// Uniform rotation from a normalized Gaussian 4-vector read as a quaternion.
/// The result is canonical, so it survives the 6d encoding exactly.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-12 {
            return Rotation::from_quaternion(q[0], q[1], q[2], q[3]).canonical();
        }
    }
}

/// Uniform point in a ball of the given radius centered at the origin.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            let r = radius * rng.random::<f64>().cbrt();
            return v * (r / n);
        }
    }
}

/// Parameters of the cluttered-task generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub n_goals: usize,
    pub n_obstacles: usize,
    /// Goal and obstacle centers lie within this distance of the base (m).
    pub max_dist: f64,
    pub radius_range: (f64, f64),
    /// Obstacles may not come closer than this to the base origin (m).
    pub base_clearance: f64,
    /// Goals are drawn at least this far from the base origin (m).
    pub min_goal_dist: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            n_goals: 8,
            n_obstacles: 8,
            max_dist: 1.2,
            radius_range: (0.05, 0.15),
            base_clearance: 0.0,
            min_goal_dist: 0.0,
        }
    }
}

/// Random goals within a ball around the base plus spherical obstacles that
/// avoid every goal position.
pub fn sample_cluttered_task<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R) -> Result<Scene, SceneError> {
    if spec.n_goals == 0 {
        return Err(SceneError::Validation { id: "n_goals".into(), reason: "need at least one goal".into() });
    }
    if !(spec.max_dist > 0.0) {
        return Err(SceneError::Validation { id: "max_dist".into(), reason: "must be positive".into() });
    }
    let (rmin, rmax) = spec.radius_range;
    if spec.n_obstacles > 0 && !(rmin > 0.0 && rmax >= rmin) {
        return Err(SceneError::Validation { id: "radius_range".into(), reason: "need 0 < min ≤ max".into() });
    }
    let mut goals = Vec::with_capacity(spec.n_goals);
    for i in 0..spec.n_goals {
        let mut attempts = 0;
        let position = loop {
            let p = random_in_ball(rng, spec.max_dist);
            if p.norm() >= spec.min_goal_dist {
                break p;
            }
            attempts += 1;
            if attempts > MAX_OBSTACLE_RESAMPLES {
                return Err(SceneError::SamplingExhausted(format!("goal {i} below minimum distance")));
            }
        };
        goals.push(Goal {
            id: format!("g{i}"),
            pose: Pose::new(position, random_rotation(rng)),
            tolerance: ToleranceMode::FullPose,
        });
    }
    let mut obstacles = Vec::with_capacity(spec.n_obstacles);
    for i in 0..spec.n_obstacles {
        let mut attempts = 0;
        let sphere = loop {
            let center = random_in_ball(rng, spec.max_dist);
            let radius = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
            let s = Sphere { center, radius };
            let clear_of_goals = goals.iter().all(|g| (g.pose.position - center).norm() > radius);
            let clear_of_base = center.norm() > radius + spec.base_clearance;
            if clear_of_goals && clear_of_base {
                break s;
            }
            attempts += 1;
            if attempts >= MAX_OBSTACLE_RESAMPLES {
                return Err(SceneError::SamplingExhausted(format!(
                    "obstacle {i} could not be placed clear of all goals"
                )));
            }
        };
        obstacles.push(Obstacle { id: format!("o{i}"), shape: Shape::Sphere(sphere) });
    }
    Ok(Scene { goals, obstacles, base_pose: Pose::identity(), seed: None })
}

/// Uniform positions in the box with uniform orientations.
pub fn sample_workspace_goals<R: Rng + ?Sized>(
    ws: &WorkspaceBox,
    n: usize,
    tolerance: ToleranceMode,
    rng: &mut R,
) -> Vec<Goal> {
    (0..n)
        .map(|i| {
            let p = Vec3::from_fn(|k, _| ws.center[k] + (rng.random::<f64>() - 0.5) * ws.extents[k]);
            Goal { id: format!("w{i}"), pose: Pose::new(p, random_rotation(rng)), tolerance }
        })
        .collect()
}

/// Sphere cover of an obstacle. Capsules become spheres of the capsule radius
/// placed along the axis at most `spacing` apart, endpoints included.
pub fn decompose_obstacle(o: &Obstacle, spacing: f64) -> Vec<Sphere> {
    match o.shape {
        Shape::Sphere(s) => vec![s],
        Shape::Capsule(c) => {
            let len = c.length();
            if len <= 1e-12 {
                return vec![Sphere { center: c.a, radius: c.radius }];
            }
            let intervals = ((len / spacing) - 1e-9).ceil().max(1.0) as usize;
            (0..=intervals)
                .map(|i| {
                    let t = i as f64 / intervals as f64;
                    Sphere { center: c.a + (c.b - c.a) * t, radius: c.radius }
                })
                .collect()
        }
    }
}
