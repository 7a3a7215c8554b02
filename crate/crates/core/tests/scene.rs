use morphforge::geometry::*;
use morphforge::scene::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = TaskSpec {
        n_goals: rng.random_range(1..10),
        n_obstacles: rng.random_range(0..10),
        ..TaskSpec::default()
    };
    let mut scene = sample_cluttered_task(&spec, &mut rng).unwrap();
    let tols = [ToleranceMode::FullPose, ToleranceMode::RotSymmetric, ToleranceMode::PositionOnly];
    for g in &mut scene.goals {
        g.tolerance = tols[rng.random_range(0..3)];
    }
    // A capsule obstacle far from every goal.
    let a = Vec3::new(5.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let b = a + Vec3::new(0.0, rng.random_range(0.0..0.5), 0.3);
    scene.obstacles.push(Obstacle { id: "cap".into(), shape: Shape::Capsule(Capsule::new(a, b, 0.07)) });
    scene.base_pose = Pose::new(random_in_ball(&mut rng, 0.1), random_rotation(&mut rng));
    scene.seed = rng.random_bool(0.5).then_some(seed);
    scene
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn save_then_load_preserves_everything(seed in any::<u64>()) {
        let scene = random_scene(seed);
        let bytes = save_scene(&scene);
        let back = load_scene(&bytes).unwrap();
        prop_assert_eq!(&back, &scene);
        prop_assert_eq!(save_scene(&back), bytes);
    }

    #[test]
    fn generated_tasks_keep_goals_outside_obstacles(seed in any::<u64>(), n in 1usize..12, m in 0usize..12) {
        let spec = TaskSpec { n_goals: n, n_obstacles: m, ..TaskSpec::default() };
        let scene = sample_cluttered_task(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!((scene.goals.len(), scene.obstacles.len()), (n, m));
        for g in &scene.goals {
            for o in &scene.obstacles {
                prop_assert!(point_distance(&g.pose.position, &o.shape) > 0.0);
            }
        }
        prop_assert!(scene.validate().is_ok());
    }

    #[test]
    fn decomposition_stays_inside_the_capsule(
        a in prop::array::uniform3(-1.0..1.0f64),
        b in prop::array::uniform3(-1.0..1.0f64),
        r in 0.01..0.3f64,
        spacing in 0.02..0.5f64,
    ) {
        let cap = Capsule::new(a.into(), b.into(), r);
        let o = Obstacle { id: "o".into(), shape: Shape::Capsule(cap) };
        let spheres = decompose_obstacle(&o, spacing);
        prop_assert!(spheres.len() >= 1);
        for pair in spheres.windows(2) {
            prop_assert!((pair[1].center - pair[0].center).norm() <= spacing + 1e-9);
        }
        for s in &spheres {
            // Containment: the farthest surface point of the sphere stays within the capsule.
            let axis = capsule_distance(&Capsule::new(s.center, s.center, 0.0), &Capsule::new(cap.a, cap.b, 0.0));
            prop_assert!(axis + s.radius - cap.radius <= 1e-9);
        }
    }
}

#[test]
fn capsule_decomposition_count() {
    let o = Obstacle {
        id: "c".into(),
        shape: Shape::Capsule(Capsule::new(Vec3::zeros(), Vec3::new(0.4, 0.0, 0.0), 0.05)),
    };
    let s = decompose_obstacle(&o, 0.1);
    let xs: Vec<f64> = s.iter().map(|s| s.center.x / 0.4).collect();
    assert_eq!(xs.len(), 5);
    for (x, want) in xs.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
        assert!((x - want).abs() < 1e-12);
    }
}
