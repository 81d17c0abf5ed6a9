use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use simloop_core::domain::{bound_motion, build_domain, DomainParams};
use simloop_core::dynamics::estimate_rotation;
use simloop_core::geometry::Aabb;
use simloop_core::scene::FeatureMatchSet;
use simloop_core::synth::rigid_state;

/// `n` matches uniform in a disk of `radius` px, rotated by `theta` about the
/// disk center, shifted, and perturbed by Gaussian noise of `sigma` px.
fn rotated_matches(theta: f64, seed: u64, n: usize, radius: f64, sigma: f64) -> FeatureMatchSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let (s, c) = theta.sin_cos();
    let center = Vector2::new(200.0, 150.0);
    let shift = Vector2::new(3.0, -2.0);
    let matches = (0..n)
        .map(|_| {
            let (r, phi) = (radius * rng.random::<f64>().sqrt(), rng.random_range(0.0..std::f64::consts::TAU));
            let a = center + r * Vector2::new(phi.cos(), phi.sin());
            let d = a - center;
            let b = center + shift + Vector2::new(c * d.x - s * d.y, s * d.x + c * d.y);
            [
                a.x + noise.sample(&mut rng),
                a.y + noise.sample(&mut rng),
                b.x + noise.sample(&mut rng),
                b.y + noise.sample(&mut rng),
            ]
        })
        .collect();
    FeatureMatchSet {
        object_id: 1,
        frame_a: 0,
        frame_b: 5,
        matches,
        dt: 5.0 / 24.0,
    }
}

#[test]
fn rotation_is_recovered_under_pixel_noise() {
    for deg in [-90.0f64, -15.0, 0.0, 15.0, 90.0] {
        for seed in 0..5 {
            let est = estimate_rotation(&rotated_matches(deg.to_radians(), seed, 50, 60.0, 0.5)).unwrap();
            assert!((est.theta.to_degrees() - deg).abs() < 0.5, "{deg} seed {seed}: {}", est.theta.to_degrees());
        }
    }
}

/// Mean squared distance of the frame-a points from their centroid.
fn spread(m: &FeatureMatchSet) -> f64 {
    let n = m.matches.len() as f64;
    let c = m.points_a().sum::<Vector2<f64>>() / n;
    m.points_a().map(|p| (p - c).norm_squared()).sum::<f64>() / n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_error_is_within_noise_bound(
        theta in -3.1f64..3.1,
        seed in 0u64..1000,
        radius in 10.0f64..100.0,
        sigma in 0.0f64..0.5,
    ) {
        let m = rotated_matches(theta, seed, 50, radius, sigma);
        let est = estimate_rotation(&m).unwrap();
        let err = (est.theta - theta + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        prop_assert!(err.abs() <= 5.0 * sigma / (50.0 * spread(&m)).sqrt() + 1e-9, "{err}");
    }

    #[test]
    fn rotation_ignores_global_translation(theta in -3.1f64..3.1, seed in 0u64..1000, dx in -500.0f64..500.0, dy in -500.0f64..500.0) {
        let m = rotated_matches(theta, seed, 50, 40.0, 0.5);
        let mut moved = m.clone();
        for p in &mut moved.matches {
            *p = [p[0] + dx, p[1] + dy, p[2] + dx, p[3] + dy];
        }
        let a = estimate_rotation(&m).unwrap().theta;
        let b = estimate_rotation(&moved).unwrap().theta;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn swept_object_and_background_fit_in_the_domain(
        p in prop::array::uniform3(-5.0f64..5.0),
        v in prop::array::uniform3(-3.0f64..3.0),
        radius in 0.01f64..1.0,
        horizon in 0.1f64..3.0,
        bg_lo in prop::array::uniform3(-10.0f64..0.0),
        bg_size in prop::array::uniform3(0.1f64..10.0),
        offset in 1.0f64..3.0,
        yaw in -3.0f64..3.0,
    ) {
        let state = rigid_state(1, Vector3::from(p), 1.0, Vector3::from(v), Vector3::zeros());
        let g = Vector3::new(0.0, -9.8, 0.0);
        let fg = bound_motion(&state, radius, horizon, &g);
        let lo = Vector3::from(bg_lo);
        let bg = Aabb::new(lo, lo + Vector3::from(bg_size));
        let rotation: Matrix3<f64> = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
        let d = build_domain(&fg, &bg, &DomainParams { offset, rotation, ..Default::default() }).unwrap();
        for c in fg.corners().iter().chain(bg.corners().iter()) {
            let s = d.to_sim(c);
            prop_assert!(s.iter().all(|&x| (-1e-12..=2.0 + 1e-12).contains(&x)), "{s:?}");
        }
        // Sampled ballistic positions stay inside the swept box.
        for k in 0..=20 {
            let t = horizon * k as f64 / 20.0;
            let x = state.anchor + state.velocity * t + 0.5 * g * t * t;
            prop_assert!(fg.contains(&x));
        }
    }
}
