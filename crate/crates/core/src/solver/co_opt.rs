use rand::Rng;

use super::{ik_refine, Adam, SolverConfig, SolverError};
use crate::grad::{loss_and_grad_with, rows_loss_and_grad, GradError};
use crate::kinematics::{build_robot, DesignParams, DhRow, JointVector, ModuleCatalog};
use crate::modes::{free_backward, free_raw, free_rows, temperature, EconomicRelaxation};
use crate::objective::{goal_terms, total_loss_with, CollisionWorld, LossBreakdown, LossWeights};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq)]
pub struct CoOptResult {
    pub params: DesignParams,
    pub q: Vec<JointVector>,
    pub loss: LossBreakdown,
    pub benchmark_loss: f64,
    /// False when the optimized point was not better and the input is returned.
    pub improved: bool,
    pub restarts: usize,
}

const PERTURBATION: f64 = 1e-6;

fn angles_from_xy(xy: &[f64]) -> Vec<f64> {
    xy.chunks(2).map(|p| p[0].atan2(p[1])).collect()
}

/// Chain rule through `q = atan2(x, y)`.
fn xy_backward(xy: &[f64], d_q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xy.len()];
    for (i, p) in xy.chunks(2).enumerate() {
        let r2 = p[0] * p[0] + p[1] * p[1];
        out[2 * i] = d_q[i] * p[1] / r2;
        out[2 * i + 1] = -d_q[i] * p[0] / r2;
    }
    out
}

fn evaluate(
    scene: &Scene,
    world: &CollisionWorld,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    w: &LossWeights,
) -> Result<LossBreakdown, SolverError> {
    let robot = build_robot(params, catalog)?.with_base(scene.base_pose);
    Ok(total_loss_with(scene, &robot, world, params, catalog, q, w)?)
}

enum DesignVars {
    Free(Vec<f64>),
    Economic(EconomicRelaxation),
    Fixed,
}

/// Adam on joint angles (as `(x, y)` pairs) and continuous design
/// variables, followed by a least-squares polish of each goal's joint
/// vector. Returns the input unchanged unless the benchmark loss improves.
pub fn co_optimize<R: Rng + ?Sized>(
    scene: &Scene,
    world: &CollisionWorld,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: &[JointVector],
    cfg: &SolverConfig,
    w: &LossWeights,
    rng: &mut R,
) -> Result<CoOptResult, SolverError> {
    let initial = evaluate(scene, world, params, catalog, q, w)?;
    let initial_bench = initial.benchmark(w);
    let n = params.dof();
    let m = q.len();

    let mut xy: Vec<f64> = q.iter().flat_map(|qi| qi.iter().flat_map(|a| [a.sin(), a.cos()])).collect();
    let mut vars = match params {
        DesignParams::Free { rows } => DesignVars::Free(free_raw(rows)),
        DesignParams::Economic { rows } => DesignVars::Economic(EconomicRelaxation::from_rows(rows, rng)),
        DesignParams::Modular { .. } => DesignVars::Fixed,
    };
    let n_design = match &vars {
        DesignVars::Free(r) => r.len(),
        DesignVars::Economic(e) => e.latents.len(),
        DesignVars::Fixed => 0,
    };
    let mut adam_q = Adam::new(xy.len(), cfg.lr_ik);
    let mut adam_p = Adam::new(n_design, cfg.lr_params);
    let split = |xy: &[f64]| -> Vec<JointVector> {
        let angles = angles_from_xy(xy);
        angles.chunks(n.max(1)).take(m).map(|c| JointVector(c.to_vec())).collect()
    };

    // Best iterate for designs whose evaluated point is exact (not relaxed).
    let mut best: Option<(f64, Vec<DhRow>, Vec<f64>)> = None;
    let mut restarts = 0;
    for step in 0..cfg.adam_steps {
        let qs = split(&xy);
        let result: Result<(f64, Vec<f64>, Vec<Vec<f64>>), GradError> = match &vars {
            DesignVars::Free(raw) => {
                let rows = free_rows(raw);
                rows_loss_and_grad(scene, world, &rows, &qs, w).map(|g| {
                    let d = free_backward(raw, &g.d_params);
                    (g.value, d, g.d_q)
                })
            }
            DesignVars::Economic(relax) => {
                let tau = temperature(step, cfg.adam_steps);
                relax.loss_and_grad(scene, world, &qs, w, tau, false)
            }
            DesignVars::Fixed => {
                loss_and_grad_with(scene, world, params, catalog, &qs, w).map(|g| (g.value, Vec::new(), g.d_q))
            }
        };
        let (value, d_design, d_q) = match result {
            Ok(r) => r,
            Err(GradError::NonFinite) if restarts == 0 => {
                restarts += 1;
                xy.iter_mut().for_each(|x| *x += rng.random_range(-PERTURBATION..PERTURBATION));
                continue;
            }
            Err(GradError::NonFinite) => break,
            Err(e) => return Err(e.into()),
        };
        match &vars {
            DesignVars::Free(raw) => {
                if best.as_ref().is_none_or(|b| value < b.0) {
                    best = Some((value, free_rows(raw), xy.clone()));
                }
            }
            DesignVars::Fixed => {
                if best.as_ref().is_none_or(|b| value < b.0) {
                    best = Some((value, Vec::new(), xy.clone()));
                }
            }
            DesignVars::Economic(_) => {}
        }
        let flat_dq: Vec<f64> = d_q.into_iter().flatten().collect();
        let g_xy = xy_backward(&xy, &flat_dq);
        adam_q.step(&mut xy, &g_xy);
        match &mut vars {
            DesignVars::Free(raw) => adam_p.step(raw, &d_design),
            DesignVars::Economic(relax) => adam_p.step(&mut relax.latents, &d_design),
            DesignVars::Fixed => {}
        }
    }

    let (final_params, final_xy) = match (&vars, best) {
        (DesignVars::Free(_), Some((_, rows, bxy))) => (params.with_rows(rows), bxy),
        (DesignVars::Fixed, Some((_, _, bxy))) => (params.clone(), bxy),
        (DesignVars::Economic(relax), _) => (params.with_rows(relax.harden()), xy.clone()),
        (DesignVars::Free(raw), None) => (params.with_rows(free_rows(raw)), xy.clone()),
        (DesignVars::Fixed, None) => (params.clone(), xy.clone()),
    };
    let mut final_q = split(&final_xy);

    let robot = build_robot(&final_params, catalog)?.with_base(scene.base_pose);
    for (goal, qi) in scene.goals.iter().zip(final_q.iter_mut()) {
        let polished = ik_refine(&robot, goal, qi, cfg);
        if goal_terms(&robot, world, goal, &polished, w).weighted(w) < goal_terms(&robot, world, goal, qi, w).weighted(w) {
            *qi = polished;
        } else {
            *qi = std::mem::take(qi).wrapped();
        }
    }
    let loss = total_loss_with(scene, &robot, world, &final_params, catalog, &final_q, w)?;
    let bench = loss.benchmark(w);
    if bench < initial_bench {
        Ok(CoOptResult { params: final_params, q: final_q, loss, benchmark_loss: bench, improved: true, restarts })
    } else {
        Ok(CoOptResult {
            params: params.clone(),
            q: q.to_vec(),
            loss: initial,
            benchmark_loss: initial_bench,
            improved: false,
            restarts,
        })
    }
}
