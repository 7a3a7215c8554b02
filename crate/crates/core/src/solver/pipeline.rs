use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;

use super::seed::sample_designs;
use super::{
    check_cancel, co_optimize, design_key, ik_refine, multi_start_ik, stream_rng, Candidate,
    Progress, ProgressEvent, Provenance, SolverConfig, SolverError, Stage, STREAM_COOPT, STREAM_IK, STREAM_SEEDING,
};
use crate::kinematics::{build_robot, forward_kinematics, DesignMode, DesignParams, JointVector, ModuleCatalog, RobotModel};
use crate::objective::{goal_error, goal_terms, solved_check, total_loss_with, CollisionWorld, LossWeights};
use crate::scene::Scene;

fn ik_starts(seed: u64, key: u64, goal: usize, dof: usize, n: usize) -> Vec<JointVector> {
    let mut rng = stream_rng(seed, &[STREAM_IK, key, goal as u64]);
    (0..n).map(|_| JointVector((0..dof).map(|_| rng.random_range(-PI..PI)).collect())).collect()
}

/// Multi-start IK for every goal of `params`; the IK starts depend only
/// on the seed, the design and the goal index.
fn initial_ik(
    scene: &Scene,
    world: &CollisionWorld,
    robot: &RobotModel,
    key: u64,
    cfg: &SolverConfig,
    w: &LossWeights,
    starts: usize,
) -> (Vec<JointVector>, Vec<Vec<JointVector>>, f64) {
    let mut best = Vec::with_capacity(scene.goals.len());
    let mut alternates = Vec::with_capacity(scene.goals.len());
    let mut total = 0.0;
    for (g, goal) in scene.goals.iter().enumerate() {
        let s = ik_starts(cfg.rng_seed, key, g, robot.dof, starts);
        let mut sols = multi_start_ik(robot, world, goal, &s, cfg, w).into_iter();
        let first = sols.next().expect("at least one start");
        total += first.goal_loss;
        best.push(first.q);
        alternates.push(sols.map(|s| s.q).collect());
    }
    (best, alternates, total)
}

/// Full per-design refinement: multi-start IK, co-optimization, and
/// per-goal re-selection among the alternates.
pub fn refine_design(
    scene: &Scene,
    world: &CollisionWorld,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    cfg: &SolverConfig,
    w: &LossWeights,
    candidate_index: usize,
) -> Result<Candidate, SolverError> {
    let robot = build_robot(params, catalog)?.with_base(scene.base_pose);
    let key = design_key(params);
    let (q0, alternates, _) = initial_ik(scene, world, &robot, key, cfg, w, cfg.ik_starts_per_goal);
    let mut rng = stream_rng(cfg.rng_seed, &[STREAM_COOPT, key]);
    let co = co_optimize(scene, world, params, catalog, &q0, cfg, w, &mut rng)?;

    let robot = if co.params == *params { robot } else { build_robot(&co.params, catalog)?.with_base(scene.base_pose) };
    let mut q = co.q.clone();
    let mut alt_out = Vec::with_capacity(alternates.len());
    for (g, goal) in scene.goals.iter().enumerate() {
        let mut options: Vec<JointVector> = alternates[g]
            .iter()
            .map(|a| if co.params == *params { a.clone() } else { ik_refine(&robot, goal, a, cfg) })
            .collect();
        let score = |qq: &JointVector| goal_terms(&robot, world, goal, qq, w).weighted(w);
        let current = score(&q[g]);
        if let Some((k, s)) = options.iter().map(score).enumerate().min_by(|a, b| a.1.total_cmp(&b.1)) {
            if s < current {
                std::mem::swap(&mut q[g], &mut options[k]);
            }
        }
        alt_out.push(options);
    }
    let stages = vec![
        "seed".into(),
        format!("ik(starts={})", cfg.ik_starts_per_goal),
        format!("co_optimize(steps={}, improved={}, restarts={})", cfg.adam_steps, co.improved, co.restarts),
        "reselect".into(),
    ];
    assemble(scene, &robot, world, co.params, catalog, q, alt_out, cfg, w, candidate_index, stages)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    scene: &Scene,
    robot: &RobotModel,
    world: &CollisionWorld,
    params: DesignParams,
    catalog: Option<&ModuleCatalog>,
    q: Vec<JointVector>,
    alternates: Vec<Vec<JointVector>>,
    cfg: &SolverConfig,
    w: &LossWeights,
    candidate_index: usize,
    stages: Vec<String>,
) -> Result<Candidate, SolverError> {
    let loss = total_loss_with(scene, robot, world, &params, catalog, &q, w)?;
    let ees: Vec<_> = q.iter().map(|qq| forward_kinematics(robot, qq).ee).collect();
    let goal_errors = scene.goals.iter().zip(&ees).map(|(goal, ee)| goal_error(goal, ee)).collect();
    let solved_goals = scene.goals.iter().zip(&ees).filter(|(goal, ee)| solved_check(goal, ee)).count();
    Ok(Candidate {
        params,
        ik: q,
        alternates,
        benchmark_loss: loss.benchmark(w),
        loss,
        score: None,
        solved_goals,
        goal_errors,
        provenance: Provenance { seed: cfg.rng_seed, candidate_index, stages },
    })
}

/// Scores a design as given. With `ik` the supplied joint vectors are used
/// unchanged; otherwise each goal gets the best multi-start IK solution.
/// The design itself is never modified.
pub fn score_design(
    scene: &Scene,
    params: &DesignParams,
    catalog: Option<&ModuleCatalog>,
    ik: Option<&[JointVector]>,
    cfg: &SolverConfig,
    w: &LossWeights,
) -> Result<Candidate, SolverError> {
    scene.validate()?;
    let robot = build_robot(params, catalog)?.with_base(scene.base_pose);
    let world = CollisionWorld::new(scene, w);
    let (q, alternates, stage) = match ik {
        Some(q) => {
            if q.len() != scene.goals.len() || q.iter().any(|qi| qi.len() != robot.dof) {
                return Err(SolverError::InvalidConfig("one joint vector of length dof is needed per goal".into()));
            }
            (q.to_vec(), vec![Vec::new(); q.len()], "given".to_string())
        }
        None => {
            let (q, alt, _) = initial_ik(scene, &world, &robot, design_key(params), cfg, w, cfg.ik_starts_per_goal);
            (q, alt, format!("ik(starts={})", cfg.ik_starts_per_goal))
        }
    };
    assemble(scene, &robot, &world, params.clone(), catalog, q, alternates, cfg, w, 0, vec![stage])
}

/// Scores one catalog assembly exactly as the pipeline scores its candidates.
pub fn evaluate_assembly(
    scene: &Scene,
    world: &CollisionWorld,
    params: &DesignParams,
    catalog: &ModuleCatalog,
    cfg: &SolverConfig,
    w: &LossWeights,
) -> Result<Candidate, SolverError> {
    refine_design(scene, world, params, Some(catalog), cfg, w, 0)
}

/// Stable sort by benchmark loss; ties keep the seeding order.
pub fn rank_candidates(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| {
        a.benchmark_loss
            .total_cmp(&b.benchmark_loss)
            .then(a.provenance.candidate_index.cmp(&b.provenance.candidate_index))
    });
}

/// Screens a pool of seeded designs by how close multi-start IK gets to
/// each goal plus hardware cost, and keeps the `n` most promising.
/// Collision is left to the later stages.
fn screen(
    scene: &Scene,
    world: &CollisionWorld,
    pool: Vec<DesignParams>,
    n: usize,
    catalog: Option<&ModuleCatalog>,
    cfg: &SolverConfig,
    w: &LossWeights,
) -> Result<Vec<DesignParams>, SolverError> {
    let scored: Vec<(f64, usize)> = pool
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let robot = build_robot(d, catalog)?.with_base(scene.base_pose);
            let (best, _, _) = initial_ik(scene, world, &robot, design_key(d), cfg, w, cfg.ik_starts_per_goal);
            let reach: f64 = scene.goals.iter().zip(&best).map(|(g, q)| goal_terms(&robot, world, g, q, w).distance).sum();
            let hw = crate::objective::hardware_cost(d, catalog);
            Ok((w.w_d * reach + w.w_hw * hw, i))
        })
        .collect::<Result<_, SolverError>>()?;
    let mut scored = scored;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = scored.into_iter().take(n).map(|(_, i)| i).collect();
    keep.sort_unstable();
    let mut pool: Vec<Option<DesignParams>> = pool.into_iter().map(Some).collect();
    Ok(keep.into_iter().map(|i| pool[i].take().expect("unique")).collect())
}

/// Seeds, refines and ranks `n_candidates` designs for one task.
pub fn design_task(
    scene: &Scene,
    mode: DesignMode,
    dof: usize,
    catalog: Option<&ModuleCatalog>,
    cfg: &SolverConfig,
    w: &LossWeights,
    progress: &dyn Progress,
) -> Result<Vec<Candidate>, SolverError> {
    scene.validate()?;
    cfg.validate()?;
    w.validate().map_err(SolverError::InvalidConfig)?;
    if dof == 0 {
        return Err(SolverError::InvalidConfig("dof must be at least 1".into()));
    }
    let total = cfg.n_candidates;
    progress.report(ProgressEvent { stage: Stage::Seeding, done: 0, total, best_loss: None });
    let world = CollisionWorld::new(scene, w);
    let mut rng = stream_rng(cfg.rng_seed, &[STREAM_SEEDING]);
    let pool_size = cfg.n_candidates * cfg.seed_pool_factor;
    let pool = sample_designs(scene, mode, dof, pool_size, cfg.n_candidates, catalog, cfg.seed_l1_floor, &mut rng)?;
    let seeds = if pool.len() > cfg.n_candidates { screen(scene, &world, pool, cfg.n_candidates, catalog, cfg, w)? } else { pool };
    check_cancel(progress)?;

    let done = AtomicUsize::new(0);
    let best = std::sync::Mutex::new(f64::INFINITY);
    let mut cands: Vec<Candidate> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            check_cancel(progress)?;
            let c = refine_design(scene, &world, d, catalog, cfg, w, i)?;
            let b = {
                let mut guard = best.lock().expect("poisoned");
                *guard = guard.min(c.benchmark_loss);
                *guard
            };
            let k = done.fetch_add(1, Ordering::SeqCst) + 1;
            progress.report(ProgressEvent { stage: Stage::CoOptimize, done: k, total, best_loss: Some(b) });
            Ok(c)
        })
        .collect::<Result<_, SolverError>>()?;
    check_cancel(progress)?;
    rank_candidates(&mut cands);
    progress.report(ProgressEvent {
        stage: Stage::Done,
        done: total,
        total,
        best_loss: cands.first().map(|c| c.benchmark_loss),
    });
    Ok(cands)
}
