use std::f64::consts::PI;

use rand::Rng;

use super::SolverError;
use crate::kinematics::{
    DesignMode, DesignParams, DhRow, ModuleCatalog, ECONOMIC_LENGTH_MAX, ECONOMIC_LENGTH_MIN, ECONOMIC_TWISTS,
    FREE_LENGTH_MAX,
};
use crate::scene::Scene;

const ATTEMPTS_PER_CANDIDATE: usize = 2000;

/// A uniformly drawn mode-valid design.
pub fn random_design<R: Rng + ?Sized>(
    mode: DesignMode,
    dof: usize,
    catalog: Option<&ModuleCatalog>,
    rng: &mut R,
) -> Result<DesignParams, SolverError> {
    Ok(match mode {
        DesignMode::Free => DesignParams::Free {
            rows: (0..dof)
                .map(|_| {
                    DhRow::new(
                        rng.random_range(0.0..=FREE_LENGTH_MAX),
                        rng.random_range(-FREE_LENGTH_MAX..=FREE_LENGTH_MAX),
                        rng.random_range(-PI..=PI),
                    )
                })
                .collect(),
        },
        DesignMode::Economic => DesignParams::Economic {
            rows: (0..dof)
                .map(|_| {
                    let len = |rng: &mut R| rng.random_range(ECONOMIC_LENGTH_MIN..=ECONOMIC_LENGTH_MAX);
                    let d = if rng.random_bool(0.5) { 0.0 } else { len(rng) };
                    let a = match rng.random_range(0..3) {
                        0 => 0.0,
                        1 => -len(rng),
                        _ => len(rng),
                    };
                    DhRow::new(d, a, ECONOMIC_TWISTS[rng.random_range(0..3)])
                })
                .collect(),
        },
        DesignMode::Modular => {
            let catalog = catalog.ok_or(crate::kinematics::KinematicsError::MissingCatalog)?;
            DesignParams::Modular { slots: (0..dof).map(|_| rng.random_range(0..catalog.len())).collect() }
        }
    })
}

fn max_reach(mode: DesignMode, dof: usize, catalog: Option<&ModuleCatalog>) -> f64 {
    match mode {
        DesignMode::Free | DesignMode::Economic => dof as f64 * 2.0 * FREE_LENGTH_MAX,
        DesignMode::Modular => {
            let best = catalog.map_or(0.0, |c| c.choices.iter().map(|m| m.interface_distance()).fold(0.0, f64::max));
            dof as f64 * best
        }
    }
}

/// `n` mode-valid designs whose reach covers the farthest goal and whose
/// pairwise L1 distances exceed a floor. Modular designs are only required
/// to be distinct.
pub fn seed_candidates<R: Rng + ?Sized>(
    scene: &Scene,
    mode: DesignMode,
    dof: usize,
    n: usize,
    catalog: Option<&ModuleCatalog>,
    l1_floor_per_joint: f64,
    rng: &mut R,
) -> Result<Vec<DesignParams>, SolverError> {
    sample_designs(scene, mode, dof, n, n, catalog, l1_floor_per_joint, rng)
}

/// Like `seed_candidates` but draws up to `want` designs and only fails
/// below `need`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_designs<R: Rng + ?Sized>(
    scene: &Scene,
    mode: DesignMode,
    dof: usize,
    want: usize,
    need: usize,
    catalog: Option<&ModuleCatalog>,
    l1_floor_per_joint: f64,
    rng: &mut R,
) -> Result<Vec<DesignParams>, SolverError> {
    let n = want.max(need);
    if need == 0 {
        return Err(SolverError::InvalidConfig("n must be at least 1".into()));
    }
    let n_choices = catalog.map_or(0, |c| c.len());
    let required = scene.max_goal_distance().min(0.95 * max_reach(mode, dof, catalog));
    let floor = match mode {
        DesignMode::Modular if l1_floor_per_joint > 0.0 => 1.0,
        DesignMode::Modular => 0.0,
        _ => l1_floor_per_joint * dof as f64,
    };
    let mut out: Vec<DesignParams> = Vec::with_capacity(n);
    let mut feats: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..ATTEMPTS_PER_CANDIDATE * n {
        if out.len() == n {
            break;
        }
        let d = random_design(mode, dof, catalog, rng)?;
        if d.reach(catalog) < required {
            continue;
        }
        let f = d.feature_vector(n_choices);
        let far = feats.iter().all(|g| f.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() > floor);
        if far {
            out.push(d);
            feats.push(f);
        }
    }
    if out.len() < need {
        return Err(SolverError::SamplingExhausted(format!(
            "found {} of {need} designs with reach ≥ {required:.3} m and pairwise L1 > {floor:.3}",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::scene::{Goal, ToleranceMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene_at(x: f64) -> Scene {
        Scene {
            goals: vec![Goal { id: "g".into(), pose: Pose::translation(x, 0.0, 0.0), tolerance: ToleranceMode::FullPose }],
            ..Scene::default()
        }
    }

    fn l1(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    #[test]
    fn free_seeds_are_valid_diverse_and_long_enough() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seeds = seed_candidates(&scene_at(0.9), DesignMode::Free, 6, 8, None, 0.2, &mut rng).unwrap();
        assert_eq!(seeds.len(), 8);
        for (i, a) in seeds.iter().enumerate() {
            a.validate(None).unwrap();
            assert!(a.reach(None) >= 0.9);
            for b in &seeds[i + 1..] {
                assert!(l1(&a.feature_vector(0), &b.feature_vector(0)) > 1.2);
            }
        }
    }

    #[test]
    fn economic_and_modular_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in seed_candidates(&scene_at(0.7), DesignMode::Economic, 5, 8, None, 0.2, &mut rng).unwrap() {
            d.validate(None).unwrap();
            assert!(d.reach(None) >= 0.7);
        }
        let cat = ModuleCatalog::default_catalog();
        let seeds = seed_candidates(&scene_at(0.7), DesignMode::Modular, 4, 8, Some(&cat), 0.2, &mut rng).unwrap();
        for (i, a) in seeds.iter().enumerate() {
            a.validate(Some(&cat)).unwrap();
            assert!(a.reach(Some(&cat)) >= 0.7);
            assert!(seeds[i + 1..].iter().all(|b| b != a));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = seed_candidates(&scene_at(0.5), DesignMode::Free, 4, 8, None, 0.2, &mut ChaCha8Rng::seed_from_u64(7));
        let b = seed_candidates(&scene_at(0.5), DesignMode::Free, 4, 8, None, 0.2, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_distinct_modular_designs_is_exhausted() {
        let cat = ModuleCatalog::default_catalog();
        let r = seed_candidates(&scene_at(0.1), DesignMode::Modular, 1, 8, Some(&cat), 0.2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(SolverError::SamplingExhausted(_))));
    }
}
