//! The co-design objective: goal distance with tolerance modes, exponential
//! collision cost, hardware cost and diversity regularizers, plus the
//! benchmark scoring helpers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    capsule_distance, clipped_arccos, relative_cosine, rotation_angle, Capsule, Pose, Sphere,
};
use crate::kinematics::{build_robot, DesignParams, JointVector, KinematicsError, ModuleCatalog, RobotModel};
use crate::scene::{Goal, Scene, ToleranceMode};

pub const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;

/// Solved thresholds: 1 mm and 1°.
pub const SOLVED_POSITION_M: f64 = 1e-3;
pub const SOLVED_ANGLE_DEG: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("expected {expected} joint vectors, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("goal {goal}: candidate {candidate} is the zero joint vector")]
    ZeroVector { goal: usize, candidate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Pose distance weight, per meter.
    pub w_d: f64,
    /// Rotational distance weight, per degree.
    pub w_r_rot: f64,
    pub w_col: f64,
    pub w_ik_div: f64,
    pub w_same_env: f64,
    pub w_cross_env: f64,
    pub w_reg: f64,
    pub w_hw: f64,
    /// Signed distance above which a pair costs nothing (m).
    pub collision_threshold: f64,
    /// Rotation errors below this are ignored inside the loss (degrees).
    pub clip_deg: f64,
    /// Use the design-similarity sum as printed (a penalty on dissimilarity)
    /// instead of rewarding diversity.
    pub literal_similarity_sign: bool,
    /// Include the hardware term in benchmark losses.
    pub bench_include_hardware: bool,
    /// Sphere spacing for capsule obstacles; defaults to each obstacle radius.
    pub obstacle_spacing: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_d: 5.0,
            w_r_rot: 0.5,
            w_col: 0.6,
            w_ik_div: 0.4,
            w_same_env: 0.5,
            w_cross_env: 2.0,
            w_reg: 1.0,
            w_hw: 0.1,
            collision_threshold: 0.12,
            clip_deg: 0.2,
            literal_similarity_sign: false,
            bench_include_hardware: true,
            obstacle_spacing: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.w_d,
            self.w_r_rot,
            self.w_col,
            self.w_ik_div,
            self.w_same_env,
            self.w_cross_env,
            self.w_reg,
            self.w_hw,
            self.clip_deg,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err("loss weights must be finite and nonnegative".into());
        }
        if !(self.collision_threshold > 0.0) {
            return Err("collision threshold must be positive".into());
        }
        Ok(())
    }
}

/// Raw loss terms; `total` is their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub distance: f64,
    pub collision: f64,
    pub hardware: f64,
    pub regularization: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(distance: f64, collision: f64, hardware: f64, regularization: f64, w: &LossWeights) -> Self {
        let total = w.w_d * distance + w.w_col * collision + w.w_hw * hardware + w.w_reg * regularization;
        LossBreakdown { distance, collision, hardware, regularization, total }
    }

    /// Task-quality loss used for ranking: no regularizers.
    pub fn benchmark(&self, w: &LossWeights) -> f64 {
        let hw = if w.bench_include_hardware { w.w_hw * self.hardware } else { 0.0 };
        w.w_d * self.distance + w.w_col * self.collision + hw
    }

    /// Distance plus collision only, the genetic-search fitness.
    pub fn fitness(&self, w: &LossWeights) -> f64 {
        w.w_d * self.distance + w.w_col * self.collision
    }
}

/// Distance between goal and end-effector pose. The clipped variant
/// subtracts the clip floor so that it vanishes below the clip angle.
pub fn pose_distance(goal: &Goal, ee: &Pose, w: &LossWeights, clipped: bool) -> f64 {
    let position = (goal.pose.position - ee.position).norm();
    let rotation = match goal.tolerance {
        ToleranceMode::PositionOnly => 0.0,
        ToleranceMode::FullPose => {
            let angle = if clipped {
                let clip = w.clip_deg.to_radians();
                clipped_arccos(relative_cosine(&goal.pose.rotation, &ee.rotation), clip).0 - clip
            } else {
                rotation_angle(&goal.pose.rotation, &ee.rotation)
            };
            w.w_r_rot * angle * RAD_TO_DEG
        }
        ToleranceMode::RotSymmetric => {
            let zz = goal.pose.rotation.z_axis().dot(&ee.rotation.z_axis());
            w.w_r_rot * (1.0 - zz) / 2.0
        }
    };
    position + rotation
}

const INV_ONE_MINUS_EXP_NEG1: f64 = 1.0 / (1.0 - 0.36787944117144233);
const EXP_NEG1: f64 = 0.36787944117144233;

/// Exponential pair cost: 1 at contact, 0 from the threshold onward.
pub fn collision_pair_loss(sd: f64, t: f64) -> f64 {
    if sd <= t {
        ((-sd / t).exp() - EXP_NEG1) * INV_ONE_MINUS_EXP_NEG1
    } else {
        0.0
    }
}

/// Derivative of [`collision_pair_loss`] with respect to the signed distance.
pub fn collision_pair_loss_derivative(sd: f64, t: f64) -> f64 {
    if sd <= t {
        -(-sd / t).exp() / t * INV_ONE_MINUS_EXP_NEG1
    } else {
        0.0
    }
}

/// Obstacles reduced to spheres, ready for pairwise checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionWorld {
    pub spheres: Vec<Sphere>,
}

impl CollisionWorld {
    pub fn new(scene: &Scene, w: &LossWeights) -> Self {
        CollisionWorld { spheres: scene.collision_spheres(w.obstacle_spacing) }
    }
}

/// Summed pair cost of one configuration: every robot capsule against every
/// obstacle sphere, plus the self-collision pairs of the robot.
pub fn collision_cost_capsules(capsules: &[Capsule], robot: &RobotModel, world: &CollisionWorld, t: f64) -> f64 {
    let mut total = 0.0;
    for cap in capsules {
        for s in &world.spheres {
            total += collision_pair_loss(capsule_distance(cap, &Capsule::from(*s)), t);
        }
    }
    for &(i, j) in &robot.pairs {
        total += collision_pair_loss(capsule_distance(&capsules[i], &capsules[j]), t);
    }
    total
}

pub fn collision_cost(scene: &Scene, robot: &RobotModel, q: &[f64], w: &LossWeights) -> f64 {
    let world = CollisionWorld::new(scene, w);
    collision_cost_capsules(&robot.world_capsules(q), robot, &world, w.collision_threshold)
}

/// Material length `Σ|a| + Σd`, or the summed unit costs of catalog modules.
pub fn hardware_cost(params: &DesignParams, catalog: Option<&ModuleCatalog>) -> f64 {
    match params {
        DesignParams::Free { rows } | DesignParams::Economic { rows } => {
            rows.iter().map(|r| r.a.abs() + r.d.abs()).sum()
        }
        DesignParams::Modular { slots } => {
            let catalog = catalog.expect("modular hardware cost needs a catalog");
            slots.iter().map(|&s| catalog.choices[s].cost).sum()
        }
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Diversity term over designs grouped by environment: the mean pairwise
/// L1 distance within environments and across environments, weighted and
/// negated so that minimizing it spreads the designs apart.
pub fn design_diversity(batch: &[Vec<DesignParams>], n_choices: usize, w: &LossWeights) -> f64 {
    let feats: Vec<Vec<Vec<f64>>> =
        batch.iter().map(|env| env.iter().map(|d| d.feature_vector(n_choices)).collect()).collect();
    let mut within = (0.0, 0usize);
    for env in &feats {
        for i in 0..env.len() {
            for j in i + 1..env.len() {
                within.0 += l1(&env[i], &env[j]);
                within.1 += 1;
            }
        }
    }
    let mut cross = (0.0, 0usize);
    for e in 0..feats.len() {
        for f in e + 1..feats.len() {
            for a in &feats[e] {
                for b in &feats[f] {
                    cross.0 += l1(a, b);
                    cross.1 += 1;
                }
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    let similarity = w.w_same_env * mean(within) + w.w_cross_env * mean(cross);
    if w.literal_similarity_sign {
        similarity
    } else {
        -similarity
    }
}

/// Weighted mean cosine similarity between IK candidates of the same goal.
pub fn ik_diversity(candidates: &[Vec<JointVector>], w: &LossWeights) -> Result<f64, ObjectiveError> {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (g, cands) in candidates.iter().enumerate() {
        if cands.len() < 2 {
            continue;
        }
        let norms: Vec<f64> = cands.iter().map(|q| q.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        if let Some(c) = norms.iter().position(|&n| n == 0.0) {
            return Err(ObjectiveError::ZeroVector { goal: g, candidate: c });
        }
        for h in 0..cands.len() {
            for k in h + 1..cands.len() {
                let dot: f64 = cands[h].iter().zip(cands[k].iter()).map(|(a, b)| a * b).sum();
                sum += dot / (norms[h] * norms[k]);
                pairs += 1;
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { w.w_ik_div * sum / pairs as f64 })
}

/// Per-goal raw terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GoalTerms {
    pub distance: f64,
    pub collision: f64,
}

impl GoalTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.w_d * self.distance + w.w_col * self.collision
    }
}

pub fn goal_terms(robot: &RobotModel, world: &CollisionWorld, goal: &Goal, q: &[f64], w: &LossWeights) -> GoalTerms {
    let frames = robot.element_frames(q);
    let ee = frames.last().expect("non-empty");
    let capsules: Vec<Capsule> = robot.shapes.iter().map(|s| robot.world_capsule(&frames, s)).collect();
    GoalTerms {
        distance: pose_distance(goal, ee, w, true),
        collision: collision_cost_capsules(&capsules, robot, world, w.collision_threshold),
    }
}

/// Loss of a single design with one joint vector per goal. Diversity terms
/// need a batch; use [`regularization`] and [`LossBreakdown::new`] for that.
pub fn total_loss(
    scene: &Scene,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    w: &LossWeights,
) -> Result<LossBreakdown, ObjectiveError> {
    let robot = build_robot(params, catalog)?.with_base(scene.base_pose);
    let world = CollisionWorld::new(scene, w);
    total_loss_with(scene, &robot, &world, params, catalog, q, w)
}

pub fn total_loss_with(
    scene: &Scene,
    robot: &RobotModel,
    world: &CollisionWorld,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    w: &LossWeights,
) -> Result<LossBreakdown, ObjectiveError> {
    if q.len() != scene.goals.len() {
        return Err(ObjectiveError::ShapeMismatch { expected: scene.goals.len(), got: q.len() });
    }
    let mut distance = 0.0;
    let mut collision = 0.0;
    for (goal, qi) in scene.goals.iter().zip(q) {
        let t = goal_terms(robot, world, goal, qi, w);
        distance += t.distance;
        collision += t.collision;
    }
    let singletons: Vec<Vec<JointVector>> = q.iter().map(|qi| vec![qi.clone()]).collect();
    let reg = regularization(&[vec![params.clone()]], catalog.map_or(0, |c| c.len()), &singletons, w)?;
    Ok(LossBreakdown::new(distance, collision, hardware_cost(params, catalog), reg, w))
}

/// `design_diversity + ik_diversity` (unweighted by `w_reg`).
pub fn regularization(
    designs: &[Vec<DesignParams>],
    n_choices: usize,
    ik_candidates: &[Vec<JointVector>],
    w: &LossWeights,
) -> Result<f64, ObjectiveError> {
    Ok(design_diversity(designs, n_choices, w) + ik_diversity(ik_candidates, w)?)
}

/// Unclipped error of one goal in the metric its tolerance mode uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalError {
    pub position_m: f64,
    /// Full rotation angle, angle between z axes, or 0 for position-only goals.
    pub angle_deg: f64,
    /// Full rotation angle regardless of tolerance mode.
    pub full_angle_deg: f64,
}

pub fn goal_error(goal: &Goal, ee: &Pose) -> GoalError {
    let position_m = (goal.pose.position - ee.position).norm();
    let full_angle_deg = rotation_angle(&goal.pose.rotation, &ee.rotation) * RAD_TO_DEG;
    let angle_deg = match goal.tolerance {
        ToleranceMode::FullPose => full_angle_deg,
        ToleranceMode::RotSymmetric => {
            goal.pose.rotation.z_axis().dot(&ee.rotation.z_axis()).clamp(-1.0, 1.0).acos() * RAD_TO_DEG
        }
        ToleranceMode::PositionOnly => 0.0,
    };
    GoalError { position_m, angle_deg, full_angle_deg }
}

/// Within 1 mm and 1° in the goal's tolerance metric.
pub fn solved_check(goal: &Goal, ee: &Pose) -> bool {
    let e = goal_error(goal, ee);
    e.position_m < SOLVED_POSITION_M && e.angle_deg < SOLVED_ANGLE_DEG
}

/// `(max − loss) / (max − min)` clamped to `[0, 1]`; 1 when the range is empty.
pub fn normalized_score(loss: f64, loss_min: f64, loss_max: f64) -> f64 {
    let span = loss_max - loss_min;
    if !(span > 0.0) {
        return 1.0;
    }
    ((loss_max - loss) / span).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotation, Vec3};
    use crate::kinematics::{forward_kinematics, DhRow};
    use std::f64::consts::PI;

    fn goal(pose: Pose, tolerance: ToleranceMode) -> Goal {
        Goal { id: "g".into(), pose, tolerance }
    }

    #[test]
    fn pose_distance_examples() {
        let w = LossWeights::default();
        let p = Pose::new(Vec3::new(0.3, 0.1, 0.2), Rotation::rot_y(0.4));
        assert_eq!(pose_distance(&goal(p, ToleranceMode::FullPose), &p, &w, false), 0.0);
        assert_eq!(pose_distance(&goal(p, ToleranceMode::FullPose), &p, &w, true), 0.0);

        for phi in [0.1, 1.0, 2.5, -3.0] {
            let ee = Pose::new(p.position, p.rotation * Rotation::rot_z(phi));
            assert!(pose_distance(&goal(p, ToleranceMode::RotSymmetric), &ee, &w, true).abs() < 1e-15);
        }
        let ee = Pose::new(p.position, p.rotation * Rotation::rot_x(PI));
        let d = pose_distance(&goal(p, ToleranceMode::RotSymmetric), &ee, &w, true);
        assert!((d - w.w_r_rot).abs() < 1e-12);

        let ee = Pose::new(p.position + Vec3::new(0.0, 0.0, 0.01), Rotation::rot_x(2.0));
        assert!((pose_distance(&goal(p, ToleranceMode::PositionOnly), &ee, &w, true) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn full_pose_uses_degrees() {
        let w = LossWeights::default();
        let p = Pose::identity();
        let ee = Pose::from_rotation(Rotation::rot_z(10f64.to_radians()));
        let d = pose_distance(&goal(p, ToleranceMode::FullPose), &ee, &w, false);
        assert!((d - 0.5 * 10.0).abs() < 1e-9);
        let clipped = pose_distance(&goal(p, ToleranceMode::FullPose), &ee, &w, true);
        assert!((clipped - 0.5 * (10.0 - 0.2)).abs() < 1e-9);
        // Below the clip angle the clipped variant is zero.
        let ee = Pose::from_rotation(Rotation::rot_z(0.1f64.to_radians()));
        assert_eq!(pose_distance(&goal(p, ToleranceMode::FullPose), &ee, &w, true), 0.0);
    }

    #[test]
    fn pair_loss_examples() {
        let t = 0.12;
        assert!(collision_pair_loss(t, t).abs() < 1e-12);
        assert!((collision_pair_loss(0.0, t) - 1.0).abs() < 1e-12);
        assert_eq!(collision_pair_loss(2.0 * t, t), 0.0);
        assert!(collision_pair_loss(t - 1e-9, t) < 1e-8);
    }

    #[test]
    fn pair_loss_derivative_matches_difference() {
        let t = 0.12;
        for sd in [-0.1, 0.0, 0.05, 0.1] {
            let h = 1e-7;
            let fd = (collision_pair_loss(sd + h, t) - collision_pair_loss(sd - h, t)) / (2.0 * h);
            assert!((fd - collision_pair_loss_derivative(sd, t)).abs() < 1e-6);
        }
    }

    #[test]
    fn single_link_collision_cases() {
        let w = LossWeights::default();
        let params = DesignParams::Free { rows: vec![DhRow::new(0.3, 0.0, 0.0)] };
        let robot = build_robot(&params, None).unwrap();
        let mut scene = Scene {
            goals: vec![goal(Pose::translation(1.0, 0.0, 0.0), ToleranceMode::FullPose)],
            ..Scene::default()
        };
        assert_eq!(collision_cost(&scene, &robot, &[0.0], &w), 0.0);
        // Sphere touching the link surface at sd = 0.
        scene.obstacles.push(crate::scene::Obstacle {
            id: "o".into(),
            shape: crate::geometry::Shape::Sphere(Sphere { center: Vec3::new(0.16, 0.0, 0.15), radius: 0.1 }),
        });
        assert!((collision_cost(&scene, &robot, &[0.0], &w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hardware_cost_examples() {
        let p = DesignParams::Free { rows: vec![DhRow::new(0.3, 0.2, 0.0), DhRow::new(0.1, 0.0, 1.0)] };
        assert!((hardware_cost(&p, None) - 0.6).abs() < 1e-15);
        assert_eq!(hardware_cost(&DesignParams::Free { rows: vec![DhRow::default(); 4] }, None), 0.0);
        let p = DesignParams::Economic { rows: vec![DhRow::new(0.1, -0.2, 0.0)] };
        assert!((hardware_cost(&p, None) - 0.3).abs() < 1e-15);
        let cat = ModuleCatalog::default_catalog();
        let m = DesignParams::Modular { slots: vec![0, 4] };
        assert!((hardware_cost(&m, Some(&cat)) - 0.54).abs() < 1e-12);
    }

    #[test]
    fn diversity_examples() {
        let w = LossWeights::default();
        let n = 4;
        let zero = DesignParams::Free { rows: vec![DhRow::default(); n] };
        let ones = DesignParams::Free { rows: vec![DhRow::new(1.0, 1.0, 1.0); n] };
        assert_eq!(design_diversity(&[vec![zero.clone(), zero.clone()]], 0, &w), 0.0);
        let d = design_diversity(&[vec![zero.clone(), ones.clone()]], 0, &w);
        assert!((d + w.w_same_env * 3.0 * n as f64).abs() < 1e-12);
        assert_eq!(design_diversity(&[vec![zero.clone()]], 0, &w), 0.0);
        let literal = LossWeights { literal_similarity_sign: true, ..w };
        assert!((design_diversity(&[vec![zero.clone(), ones.clone()]], 0, &literal) - 0.5 * 12.0).abs() < 1e-12);
        // Cross-environment term only.
        let d = design_diversity(&[vec![zero], vec![ones]], 0, &w);
        assert!((d + w.w_cross_env * 12.0).abs() < 1e-12);
    }

    #[test]
    fn ik_diversity_examples() {
        let w = LossWeights::default();
        let q = JointVector(vec![0.3, -0.2, 1.0]);
        let same = ik_diversity(&[vec![q.clone(), q.clone()]], &w).unwrap();
        assert!((same - w.w_ik_div).abs() < 1e-15);
        let ortho = ik_diversity(&[vec![JointVector(vec![1.0, 0.0]), JointVector(vec![0.0, 2.0])]], &w).unwrap();
        assert_eq!(ortho, 0.0);
        let neg = JointVector(q.iter().map(|x| -x).collect());
        let anti = ik_diversity(&[vec![q.clone(), neg]], &w).unwrap();
        assert!((anti + w.w_ik_div).abs() < 1e-15);
        assert!(matches!(
            ik_diversity(&[vec![q, JointVector::zeros(3)]], &w),
            Err(ObjectiveError::ZeroVector { goal: 0, candidate: 1 })
        ));
        assert_eq!(ik_diversity(&[vec![JointVector::zeros(2)]], &w).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_zero_and_linear() {
        let w = LossWeights::default();
        let params = DesignParams::Free { rows: vec![DhRow::default(); 2] };
        let robot = build_robot(&params, None).unwrap();
        let q = vec![JointVector(vec![0.4, -0.3])];
        let ee = forward_kinematics(&robot, &q[0]).ee;
        let mut scene = Scene { goals: vec![goal(ee, ToleranceMode::FullPose)], ..Scene::default() };
        let lb = total_loss(&scene, &params, None, &q, &w).unwrap();
        assert_eq!(lb.total, 0.0);

        let delta = 0.037;
        scene.goals[0].pose.position.x += delta;
        let lb = total_loss(&scene, &params, None, &q, &w).unwrap();
        assert!((lb.total - w.w_d * delta).abs() < 1e-12);
        assert!((lb.total - (w.w_d * lb.distance + w.w_col * lb.collision + w.w_hw * lb.hardware + w.w_reg * lb.regularization)).abs() < 1e-12);

        assert!(matches!(
            total_loss(&scene, &params, None, &[], &w),
            Err(ObjectiveError::ShapeMismatch { expected: 1, got: 0 })
        ));
    }

    #[test]
    fn solved_and_score() {
        let p = Pose::identity();
        let near = Pose::new(Vec3::new(0.0005, 0.0, 0.0), Rotation::rot_z(0.5f64.to_radians()));
        assert!(solved_check(&goal(p, ToleranceMode::FullPose), &near));
        let twisted = Pose::new(Vec3::zeros(), Rotation::rot_z(1.0));
        assert!(!solved_check(&goal(p, ToleranceMode::FullPose), &twisted));
        assert!(solved_check(&goal(p, ToleranceMode::RotSymmetric), &twisted));
        let tilted = Pose::new(Vec3::zeros(), Rotation::rot_x(0.5));
        assert!(solved_check(&goal(p, ToleranceMode::PositionOnly), &tilted));
        assert!(!solved_check(&goal(p, ToleranceMode::RotSymmetric), &tilted));

        assert_eq!(normalized_score(1.0, 1.0, 3.0), 1.0);
        assert_eq!(normalized_score(3.0, 1.0, 3.0), 0.0);
        assert_eq!(normalized_score(2.0, 1.0, 3.0), 0.5);
        assert_eq!(normalized_score(2.0, 2.0, 2.0), 1.0);
        assert_eq!(normalized_score(0.0, 1.0, 3.0), 1.0);
    }
}
