//! Gradients of the objective with respect to joint angles and continuous
//! design parameters, and a central-difference checker.
//!
//! The chain is treated as a sequence of elementary transforms. Every loss
//! term is a function of points rigidly attached to some element frame plus
//! the end-effector orientation, so one backward sweep of suffix sums of
//! point gradients (`G`) and their moments (`Σ p × g`) yields the
//! derivative of every revolute and prismatic element at once.

use thiserror::Error;

use crate::geometry::{capsule_distance_with_grad, clipped_arccos, Capsule, Pose, Vec3};
use crate::kinematics::{build_robot, DesignParams, DhRow, Element, JointVector, ModuleCatalog, RobotModel, Source};
use crate::objective::{
    collision_pair_loss, collision_pair_loss_derivative, hardware_cost, CollisionWorld, LossWeights, ObjectiveError,
    RAD_TO_DEG,
};
use crate::scene::{Goal, Scene, ToleranceMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("non-finite loss or gradient")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub value: f64,
    /// `n × 3` in `(d, a, α)` order; zero for discrete entries.
    pub d_params: Vec<[f64; 3]>,
    /// One row per goal.
    pub d_q: Vec<Vec<f64>>,
}

impl GradResult {
    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d_params.iter().flatten().all(|x| x.is_finite())
            && self.d_q.iter().flatten().all(|x| x.is_finite())
    }
}

/// Accumulates point gradients per element frame plus the end-effector
/// angular gradient, then sweeps back to element derivatives.
struct Adjoint {
    force: Vec<Vec3>,
    moment: Vec<Vec3>,
    torque: Vec3,
}

impl Adjoint {
    fn new(n_frames: usize) -> Self {
        Adjoint { force: vec![Vec3::zeros(); n_frames], moment: vec![Vec3::zeros(); n_frames], torque: Vec3::zeros() }
    }

    #[inline]
    fn add_point(&mut self, frame: usize, p: &Vec3, g: &Vec3) {
        self.force[frame] += g;
        self.moment[frame] += p.cross(g);
    }

    fn backward(mut self, robot: &RobotModel, frames: &[Pose], d_q: &mut [f64], d_params: &mut [[f64; 3]]) {
        let n = self.force.len();
        for f in (0..n - 1).rev() {
            let (fo, mo) = (self.force[f + 1], self.moment[f + 1]);
            self.force[f] += fo;
            self.moment[f] += mo;
        }
        for (k, e) in robot.elements.iter().enumerate() {
            let (Some(source), Some(axis)) = (e.source(), e.world_axis(&frames[k])) else { continue };
            let (g_sum, m_sum) = (self.force[k + 1], self.moment[k + 1]);
            let g = match e {
                Element::Revolute { .. } => {
                    let c = frames[k].position;
                    axis.dot(&(m_sum - c.cross(&g_sum) + self.torque))
                }
                Element::Prismatic { .. } => axis.dot(&g_sum),
                Element::Fixed(_) => unreachable!(),
            };
            match source {
                Source::Joint(j) => d_q[j] += g,
                Source::Param { row, col } => d_params[row][col] += g,
            }
        }
    }
}

/// Nondifferentiable-state record used to exclude coordinates near kinks.
pub type Signature = Vec<u8>;

/// Value and gradient of one goal's weighted distance + collision terms.
/// Writes into `d_q` (length dof) and accumulates into `d_params`.
pub fn goal_loss_and_grad(
    robot: &RobotModel,
    world: &CollisionWorld,
    goal: &Goal,
    q: &[f64],
    w: &LossWeights,
    d_q: &mut [f64],
    d_params: &mut [[f64; 3]],
    mut signature: Option<&mut Signature>,
) -> f64 {
    let frames = robot.element_frames(q);
    let ee_index = frames.len() - 1;
    let ee = frames[ee_index];
    let mut adj = Adjoint::new(frames.len());
    let mut value = 0.0;

    // Pose distance.
    let diff = ee.position - goal.pose.position;
    let dist = diff.norm();
    value += w.w_d * dist;
    if dist > 0.0 {
        adj.add_point(ee_index, &ee.position, &(diff * (w.w_d / dist)));
    }
    match goal.tolerance {
        ToleranceMode::PositionOnly => {}
        ToleranceMode::FullPose => {
            let clip = w.clip_deg.to_radians();
            let m = ee.rotation.matrix() * goal.pose.rotation.matrix().transpose();
            let cosine = (m.trace() - 1.0) / 2.0;
            let (phi, dphi) = clipped_arccos(cosine, clip);
            let scale = w.w_d * w.w_r_rot * RAD_TO_DEG;
            value += scale * (phi - clip);
            let v = Vec3::new(m[(1, 2)] - m[(2, 1)], m[(2, 0)] - m[(0, 2)], m[(0, 1)] - m[(1, 0)]);
            adj.torque += v * (scale * dphi * 0.5);
            if let Some(s) = signature.as_deref_mut() {
                s.push(if dphi == 0.0 { if phi == clip { 1 } else { 2 } } else { 0 });
            }
        }
        ToleranceMode::RotSymmetric => {
            let ze = ee.rotation.z_axis();
            let zg = goal.pose.rotation.z_axis();
            let scale = w.w_d * w.w_r_rot * 0.5;
            value += scale * (1.0 - ze.dot(&zg));
            adj.torque -= ze.cross(&zg) * scale;
        }
    }
    if let Some(s) = signature.as_deref_mut() {
        s.push(u8::from(dist == 0.0));
    }

    // Collision.
    let t = w.collision_threshold;
    let capsules: Vec<Capsule> = robot.shapes.iter().map(|s| robot.world_capsule(&frames, s)).collect();
    let mut pair = |adj: &mut Adjoint, i: usize, other: &Capsule, other_shape: Option<usize>| -> f64 {
        let dg = capsule_distance_with_grad(&capsules[i], other);
        if let Some(s) = signature.as_deref_mut() {
            s.push(u8::from(dg.value <= t) | (u8::from(dg.first[0] == Vec3::zeros() && dg.first[1] == Vec3::zeros()) << 1));
        }
        if dg.value > t {
            return 0.0;
        }
        let coef = w.w_col * collision_pair_loss_derivative(dg.value, t);
        let shape = &robot.shapes[i];
        adj.add_point(shape.a.frame, &capsules[i].a, &(dg.first[0] * coef));
        adj.add_point(shape.b.frame, &capsules[i].b, &(dg.first[1] * coef));
        if let Some(j) = other_shape {
            let sj = &robot.shapes[j];
            adj.add_point(sj.a.frame, &capsules[j].a, &(dg.second[0] * coef));
            adj.add_point(sj.b.frame, &capsules[j].b, &(dg.second[1] * coef));
        }
        w.w_col * collision_pair_loss(dg.value, t)
    };
    let mut collision = 0.0;
    for i in 0..capsules.len() {
        for s in &world.spheres {
            collision += pair(&mut adj, i, &Capsule::from(*s), None);
        }
    }
    for &(i, j) in &robot.pairs {
        let cj = capsules[j];
        collision += pair(&mut adj, i, &cj, Some(j));
    }
    value += collision;

    d_q.iter_mut().for_each(|x| *x = 0.0);
    adj.backward(robot, &frames, d_q, d_params);
    value
}

/// Value and gradient for an arbitrary row matrix, treated as unconstrained
/// continuous parameters (used by relaxations). Hardware cost is `Σ|a| + Σd`.
pub fn rows_loss_and_grad(
    scene: &Scene,
    world: &CollisionWorld,
    rows: &[DhRow],
    q: &[JointVector],
    w: &LossWeights,
) -> Result<GradResult, GradError> {
    let robot = build_robot(&DesignParams::Free { rows: rows.to_vec() }, None)
        .map_err(ObjectiveError::from)?
        .with_base(scene.base_pose);
    let mut res = model_loss_and_grad(scene, &robot, world, q, w, None)?;
    for (r, g) in rows.iter().zip(res.d_params.iter_mut()) {
        res.value += w.w_hw * (r.a.abs() + r.d.abs());
        g[0] += w.w_hw * sign(r.d);
        g[1] += w.w_hw * sign(r.a);
    }
    if !res.is_finite() {
        return Err(GradError::NonFinite);
    }
    Ok(res)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Goal terms only (no hardware), summed over goals.
pub fn model_loss_and_grad(
    scene: &Scene,
    robot: &RobotModel,
    world: &CollisionWorld,
    q: &[JointVector],
    w: &LossWeights,
    mut signature: Option<&mut Signature>,
) -> Result<GradResult, GradError> {
    if q.len() != scene.goals.len() {
        return Err(ObjectiveError::ShapeMismatch { expected: scene.goals.len(), got: q.len() }.into());
    }
    let n_rows = robot.dof;
    let mut d_params = vec![[0.0; 3]; n_rows];
    let mut d_q = vec![vec![0.0; robot.dof]; q.len()];
    let mut value = 0.0;
    for (i, goal) in scene.goals.iter().enumerate() {
        value += goal_loss_and_grad(robot, world, goal, &q[i], w, &mut d_q[i], &mut d_params, signature.as_deref_mut());
    }
    Ok(GradResult { value, d_params, d_q })
}

/// Total loss of a single design and its gradient. The diversity
/// regularizers vanish for a single design with one joint vector per goal.
pub fn loss_and_grad(
    scene: &Scene,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    w: &LossWeights,
) -> Result<GradResult, GradError> {
    let world = CollisionWorld::new(scene, w);
    loss_and_grad_with(scene, &world, params, catalog, q, w)
}

pub fn loss_and_grad_with(
    scene: &Scene,
    world: &CollisionWorld,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    w: &LossWeights,
) -> Result<GradResult, GradError> {
    let res = match params {
        DesignParams::Free { rows } => rows_loss_and_grad(scene, world, rows, q, w)?,
        DesignParams::Economic { rows } => {
            params.validate(None).map_err(ObjectiveError::from)?;
            let mut res = rows_loss_and_grad(scene, world, rows, q, w)?;
            for g in &mut res.d_params {
                g[2] = 0.0;
            }
            res
        }
        DesignParams::Modular { .. } => {
            let robot = build_robot(params, catalog).map_err(ObjectiveError::from)?.with_base(scene.base_pose);
            let mut res = model_loss_and_grad(scene, &robot, world, q, w, None)?;
            res.value += w.w_hw * hardware_cost(params, catalog);
            res.d_params.iter_mut().for_each(|g| *g = [0.0; 3]);
            res
        }
    };
    if !res.is_finite() {
        return Err(GradError::NonFinite);
    }
    Ok(res)
}

/// Kink signature of the rows/joint-angle point: robot structure, active
/// collision pairs, clamp states and sign patterns of the hardware term.
pub fn signature(scene: &Scene, world: &CollisionWorld, rows: &[DhRow], q: &[JointVector], w: &LossWeights) -> Signature {
    let Ok(robot) = build_robot(&DesignParams::Free { rows: rows.to_vec() }, None) else { return vec![u8::MAX] };
    let robot = robot.with_base(scene.base_pose);
    let mut sig = vec![robot.shapes.len() as u8];
    sig.extend(rows.iter().flat_map(|r| [sign(r.d) as i8 as u8, sign(r.a) as i8 as u8]));
    let _ = model_loss_and_grad(scene, &robot, world, q, w, Some(&mut sig));
    sig
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// Denominator floor of the relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const FD_REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

/// Central differences of `f` at `x` against `grad`. A coordinate is skipped
/// when `sig` differs anywhere within `±2·step` of `x`.
pub fn fd_check_fn<F, S>(f: F, sig: S, x: &[f64], grad: &[f64], step: f64) -> FdReport
where
    F: Fn(&[f64]) -> f64,
    S: Fn(&[f64]) -> Signature,
{
    assert!(step > 0.0, "step must be positive");
    let base_sig = sig(x);
    let mut report = FdReport { max_rel_error: 0.0, checked: 0, excluded: 0 };
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let probe = |xp: &mut Vec<f64>, delta: f64| {
            xp[i] = x[i] + delta;
            let s = sig(xp);
            xp[i] = x[i];
            s
        };
        let kinked = [-2.0, -1.0, 1.0, 2.0].iter().any(|m| probe(&mut xp, m * step) != base_sig);
        if kinked {
            report.excluded += 1;
            continue;
        }
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        report.max_rel_error = report.max_rel_error.max(relative_error(grad[i], fd));
        report.checked += 1;
    }
    report
}

/// Flat coordinate layout of a design: joint angles of every goal first,
/// then `(d, a, α)` of every row for free designs or `(d, a)` for economic.
fn free_coordinates(params: &DesignParams) -> Vec<usize> {
    match params {
        DesignParams::Free { rows } => (0..rows.len() * 3).collect(),
        DesignParams::Economic { rows } => (0..rows.len()).flat_map(|r| [3 * r, 3 * r + 1]).collect(),
        DesignParams::Modular { .. } => Vec::new(),
    }
}

/// Compares [`loss_and_grad`] with central differences over every free
/// coordinate. Economic designs are perturbed as plain continuous rows.
pub fn finite_difference_check(
    scene: &Scene,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    w: &LossWeights,
    step: f64,
) -> Result<FdReport, GradError> {
    let world = CollisionWorld::new(scene, w);
    let analytic = loss_and_grad_with(scene, &world, params, catalog, q, w)?;
    let dof = params.dof();
    let nq = q.len() * dof;
    let param_coords = free_coordinates(params);
    let rows0: Vec<DhRow> = params.rows().map(|r| r.to_vec()).unwrap_or_default();

    let mut x: Vec<f64> = q.iter().flat_map(|qi| qi.iter().copied()).collect();
    let mut grad: Vec<f64> = analytic.d_q.iter().flatten().copied().collect();
    for &c in &param_coords {
        x.push(rows0[c / 3].to_array()[c % 3]);
        grad.push(analytic.d_params[c / 3][c % 3]);
    }

    let unpack = |x: &[f64]| -> (Vec<JointVector>, Vec<DhRow>) {
        let qs = x[..nq].chunks(dof.max(1)).map(|c| JointVector(c.to_vec())).collect();
        let mut rows = rows0.clone();
        for (k, &c) in param_coords.iter().enumerate() {
            let v = x[nq + k];
            match c % 3 {
                0 => rows[c / 3].d = v,
                1 => rows[c / 3].a = v,
                _ => rows[c / 3].alpha = v,
            }
        }
        (qs, rows)
    };
    let value = |x: &[f64]| -> f64 {
        let (qs, rows) = unpack(x);
        match params {
            DesignParams::Modular { .. } => {
                loss_and_grad_with(scene, &world, params, catalog, &qs, w).map_or(f64::NAN, |r| r.value)
            }
            _ => rows_loss_and_grad(scene, &world, &rows, &qs, w).map_or(f64::NAN, |r| r.value),
        }
    };
    let sig = |x: &[f64]| -> Signature {
        let (qs, rows) = unpack(x);
        match params {
            DesignParams::Modular { .. } => {
                let robot = build_robot(params, catalog).expect("validated").with_base(scene.base_pose);
                let mut s = Vec::new();
                let _ = model_loss_and_grad(scene, &robot, &world, &qs, w, Some(&mut s));
                s
            }
            _ => signature(scene, &world, &rows, &qs, w),
        }
    };
    Ok(fd_check_fn(value, sig, &x, &grad, step))
}
