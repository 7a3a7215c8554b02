use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::SolverConfig;
use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::kinematics::{jacobian_from_frames, JointVector, RobotModel};
use crate::objective::{goal_terms, pose_distance, CollisionWorld, LossWeights};
use crate::scene::{Goal, ToleranceMode};

const CONVERGED: f64 = 1e-6;
/// Largest joint update per iteration (radians); only guards blow-ups near singularities.
const MAX_STEP: f64 = 4.0 * PI;
/// Metres per radian when weighing rotation against position error.
const ROTATION_SCALE: f64 = 0.2;
const DAMPING_MIN: f64 = 1e-8;
const DAMPING_MAX: f64 = 1.0;

/// Task-space error rows and the matching selection of Jacobian rows.
///
/// Position error `p_g − p`; for full poses the rotation vector of
/// `R_g·Rᵀ`; for rotationally symmetric goals the swing that aligns the
/// tool z axis, expressed in the two directions normal to it.
pub fn ik_error(goal: &Goal, ee: &Pose) -> (DVector<f64>, DMatrix<f64>) {
    let dp = goal.pose.position - ee.position;
    match goal.tolerance {
        ToleranceMode::PositionOnly => {
            (DVector::from_column_slice(dp.as_slice()), DMatrix::identity(3, 6))
        }
        ToleranceMode::FullPose => {
            let rot = (goal.pose.rotation * ee.rotation.inverse()).log();
            (DVector::from_iterator(6, dp.iter().chain(rot.iter()).copied()), DMatrix::identity(6, 6))
        }
        ToleranceMode::RotSymmetric => {
            let ze = ee.rotation.z_axis();
            let zg = goal.pose.rotation.z_axis();
            let (b1, b2) = (ee.rotation.x_axis(), ee.rotation.col(1));
            let axis = ze.cross(&zg);
            let s = axis.norm();
            let c = ze.dot(&zg);
            let swing: Vec3 = if s > 1e-12 {
                axis * (s.atan2(c) / s)
            } else if c > 0.0 {
                Vec3::zeros()
            } else {
                b1 * std::f64::consts::PI
            };
            let e = DVector::from_vec(vec![dp.x, dp.y, dp.z, b1.dot(&swing), b2.dot(&swing)]);
            let mut p = DMatrix::zeros(5, 6);
            for i in 0..3 {
                p[(i, i)] = 1.0;
                p[(3, 3 + i)] = b1[i];
                p[(4, 3 + i)] = b2[i];
            }
            (e, p)
        }
    }
}

fn converged(e: &DVector<f64>) -> bool {
    let pos = e.rows(0, 3).norm();
    let rot = if e.len() > 3 { e.rows(3, e.len() - 3).norm() } else { 0.0 };
    pos < CONVERGED && rot < CONVERGED
}

fn weighted_norm(e: &DVector<f64>) -> f64 {
    let rot = if e.len() > 3 { e.rows(3, e.len() - 3).norm_squared() } else { 0.0 };
    (e.rows(0, 3).norm_squared() + ROTATION_SCALE * ROTATION_SCALE * rot).sqrt()
}

/// Damped least-squares refinement `q ← q + Jᵀ(JJᵀ + λI)⁻¹e` with adaptive
/// damping. Rotation rows are scaled by a characteristic length so that
/// metres and radians are comparable. Returns the best iterate by
/// unclipped pose distance.
pub fn ik_refine(robot: &RobotModel, goal: &Goal, q0: &[f64], cfg: &SolverConfig) -> JointVector {
    let w = LossWeights::default();
    let n = robot.dof;
    let mut q = JointVector(q0.to_vec()).wrapped();
    let mut frames = robot.element_frames(&q);
    let (mut e, mut sel) = ik_error(goal, frames.last().expect("non-empty"));
    let mut e_norm = weighted_norm(&e);
    let mut best = (pose_distance(goal, frames.last().expect("non-empty"), &w, false), q.clone());
    let mut lambda = cfg.dls_damping;

    for _ in 0..cfg.ik_max_steps {
        if converged(&e) || n == 0 {
            break;
        }
        let mut j = &sel * jacobian_from_frames(robot, &frames);
        let mut ew = e.clone();
        for r in 3..ew.len() {
            ew[r] *= ROTATION_SCALE;
            j.row_mut(r).scale_mut(ROTATION_SCALE);
        }
        let mut a = &j * j.transpose();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let Some(chol) = a.cholesky() else {
            lambda = (lambda * 2.0).min(DAMPING_MAX);
            continue;
        };
        let mut dq = j.transpose() * chol.solve(&ew);
        let m = dq.amax();
        if m > MAX_STEP {
            dq *= MAX_STEP / m;
        }
        let q_new = JointVector((0..n).map(|i| wrap_angle(q[i] + dq[i])).collect());
        let frames_new = robot.element_frames(&q_new);
        let (e_new, sel_new) = ik_error(goal, frames_new.last().expect("non-empty"));
        let norm_new = weighted_norm(&e_new);
        if norm_new < e_norm {
            lambda = (lambda * 0.5).max(DAMPING_MIN);
            let d = pose_distance(goal, frames_new.last().expect("non-empty"), &w, false);
            if d < best.0 {
                best = (d, q_new.clone());
            }
            e_norm = norm_new;
            q = q_new;
            frames = frames_new;
            e = e_new;
            sel = sel_new;
        } else {
            lambda = (lambda * 2.0).min(DAMPING_MAX);
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    /// Weighted distance + collision terms of this goal.
    pub goal_loss: f64,
}

/// Refines every start and returns the solutions sorted by goal loss.
pub fn multi_start_ik(
    robot: &RobotModel,
    world: &CollisionWorld,
    goal: &Goal,
    starts: &[JointVector],
    cfg: &SolverConfig,
    w: &LossWeights,
) -> Vec<IkSolution> {
    let mut sols: Vec<IkSolution> = starts
        .iter()
        .map(|s| {
            let q = ik_refine(robot, goal, s, cfg);
            let goal_loss = goal_terms(robot, world, goal, &q, w).weighted(w);
            IkSolution { q, goal_loss }
        })
        .collect();
    sols.sort_by(|a, b| a.goal_loss.total_cmp(&b.goal_loss));
    sols
}
