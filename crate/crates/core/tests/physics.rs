use nalgebra::Vector3;
use proptest::prelude::*;
use simloop_core::domain::{build_domain, DomainParams, SimDomain};
use simloop_core::dynamics::per_point_velocity;
use simloop_core::geometry::Aabb;
use simloop_core::material::{map_descriptor, MaterialDescriptor, MaterialParams};
use simloop_core::mpm::{build_collider, seed_particles, Collider, ParticleSet, SeedParams, Solver};
use simloop_core::synth::{cube_mesh, rigid_state};

fn rubber() -> MaterialParams {
    map_descriptor(&MaterialDescriptor::parse("rubber", "high", "smooth").unwrap())
}

fn zero_g_domain(n: usize) -> SimDomain {
    let scene = Aabb::new(Vector3::repeat(-0.5), Vector3::repeat(0.5));
    let params = DomainParams {
        n,
        gravity: Vector3::zeros(),
        ..Default::default()
    };
    build_domain(&scene, &scene, &params).unwrap()
}

fn cube(object_id: u32, center: Vector3<f64>, v: Vector3<f64>, w: Vector3<f64>, d: &SimDomain) -> ParticleSet {
    let state = rigid_state(object_id, center, 1.0, v, w);
    seed_particles(&cube_mesh(object_id, 0.12, [0.5; 3]), &state, d, &rubber(), &SeedParams::default()).unwrap()
}

#[test]
fn colliding_blocks_conserve_momentum() {
    let d = zero_g_domain(48);
    let mut p = cube(1, Vector3::new(-0.1, 0.0, 0.0), Vector3::new(0.8, 0.0, 0.0), Vector3::zeros(), &d);
    p.append(cube(2, Vector3::new(0.1, 0.01, 0.0), Vector3::new(-0.5, 0.0, 0.1), Vector3::zeros(), &d));
    let collider = Collider::empty(&d, 0.3);
    let mut solver = Solver::new(&d);
    let p0 = p.momentum();
    let mut prev = p0;
    for _ in 0..300 {
        let dt = solver.stable_dt(&p, 0.4).min(d.dt);
        solver.step(&mut p, &collider, dt, 0.4).unwrap();
        let now = p.momentum();
        assert!((now - prev).norm() / p0.norm() < 1e-10);
        prev = now;
    }
    // The blocks have met: block 1 lost most of its approach speed.
    let (m1, v1) = (0..p.len())
        .filter(|&i| p.object_id[i] == 1)
        .fold((0.0, 0.0), |(m, mv), i| (m + p.mass[i], mv + p.mass[i] * p.v[i].x));
    assert!(v1 / m1 < 0.5 * d.vel_to_sim(&Vector3::new(0.8, 0.0, 0.0)).x, "{}", v1 / m1);
}

#[test]
fn undamped_free_spin_does_not_gain_energy() {
    let d = zero_g_domain(48);
    let mut p = cube(1, Vector3::zeros(), Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.0, 3.0, 1.0), &d);
    let collider = Collider::empty(&d, 0.3);
    let mut solver = Solver::new(&d);
    let g = Vector3::zeros();
    let e0 = p.total_energy(&g);
    for _ in 0..200 {
        let dt = solver.stable_dt(&p, 0.4).min(d.dt);
        solver.step(&mut p, &collider, dt, 0.4).unwrap();
    }
    assert!(p.total_energy(&g) <= e0 * (1.0 + 1e-6));
    assert!(p.total_energy(&g) > 0.5 * e0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn seeded_velocities_are_rigid(
        v in prop::array::uniform3(-2.0f64..2.0),
        w in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let d = zero_g_domain(32);
        let p = cube(1, Vector3::new(0.05, -0.02, 0.0), Vector3::from(v), Vector3::from(w), &d);
        for i in (0..p.len()).step_by(7) {
            for j in (0..p.len()).step_by(5) {
                let s = (p.v[i] - p.v[j]).dot(&(p.x[i] - p.x[j]));
                prop_assert!(s.abs() < 1e-9, "{s}");
            }
        }
    }

    #[test]
    fn per_point_velocity_has_no_stretching(
        w in prop::array::uniform3(-5.0f64..5.0),
        pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..20),
    ) {
        let state = rigid_state(1, Vector3::new(0.3, 0.1, -0.2), 1.0, Vector3::new(1.0, 0.0, 0.0), Vector3::from(w));
        let xs: Vec<_> = pts.into_iter().map(Vector3::from).collect();
        let vs = per_point_velocity(&state, &xs);
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                prop_assert!((vs[i] - vs[j]).dot(&(xs[i] - xs[j])).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn damped_drop_onto_floor_never_gains_energy() {
    let scene = Aabb::new(Vector3::new(-0.4, -0.1, -0.4), Vector3::new(0.4, 0.7, 0.4));
    let d = build_domain(&scene, &scene, &DomainParams { n: 48, ..Default::default() }).unwrap();
    let floor: Vec<Vector3<f64>> = (0..=40)
        .flat_map(|i| (0..=40).map(move |k| Vector3::new(-0.4 + 0.02 * i as f64, 0.0, -0.4 + 0.02 * k as f64)))
        .collect();
    let collider = build_collider(&floor, &Vector3::new(0.0, 2.0, 0.0), &d, 0.3);
    let mut material = map_descriptor(&MaterialDescriptor::parse("plush", "medium", "smooth").unwrap());
    material.youngs = 2e5;
    let state = rigid_state(1, Vector3::new(0.0, 0.25, 0.0), 1.0, Vector3::new(0.2, 0.0, 0.0), Vector3::zeros());
    let mut p = seed_particles(&cube_mesh(1, 0.12, [0.5; 3]), &state, &d, &material, &SeedParams::default()).unwrap();
    let mut solver = Solver::new(&d);
    let g = d.gravity_sim;
    let mut energies = vec![p.total_energy(&g)];
    let mut lowest = f64::INFINITY;
    for _ in 0..3000 {
        let dt = solver.stable_dt(&p, 0.4).min(d.dt);
        solver.step(&mut p, &collider, dt, 0.4).unwrap();
        energies.push(p.total_energy(&g));
        lowest = lowest.min(d.from_sim(&p.center_of_mass()).y);
    }
    assert!(lowest < 0.12, "block never reached the floor: {lowest}");
    let scale = energies[0].abs();
    for k in 0..energies.len() - 10 {
        assert!(energies[k + 10] <= energies[k] + 1e-6 * scale, "step {k}: {} -> {}", energies[k], energies[k + 10]);
    }
}
