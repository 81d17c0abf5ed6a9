use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::particles::{particle_id, ParticleSet, SimMaterial};
use crate::domain::SimDomain;
use crate::dynamics::{per_point_velocity, ObjectInitState};
use crate::error::{Error, Result};
use crate::geometry::{bounding_sphere, Aabb, PointGrid};
use crate::material::MaterialParams;
use crate::scene::ObjectMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedParams {
    /// Target particles per grid cell.
    pub ppc: usize,
    /// Jitter amplitude as a fraction of the lattice spacing.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SeedParams {
    fn default() -> Self {
        SeedParams {
            ppc: 8,
            jitter: 0.25,
            seed: 0,
        }
    }
}

/// Mesh vertices placed in sim space: the mesh's bounding-sphere center goes to `state.anchor`.
pub fn placed_vertices(mesh: &ObjectMesh, state: &ObjectInitState, domain: &SimDomain) -> Vec<Vector3<f64>> {
    let center = bounding_sphere(&mesh.vertices, 0).map_or(Vector3::zeros(), |s| s.center);
    mesh.vertices
        .iter()
        .map(|v| domain.to_sim(&(state.anchor + state.scale * (state.orientation * (v - center)))))
        .collect()
}

/// Fills the placed mesh volume with a jittered particle lattice at about `ppc` particles per cell.
pub fn seed_particles(
    mesh: &ObjectMesh,
    state: &ObjectInitState,
    domain: &SimDomain,
    material: &MaterialParams,
    params: &SeedParams,
) -> Result<ParticleSet> {
    if params.ppc == 0 {
        return Err(Error::validation("ppc must be >= 1"));
    }
    let verts = placed_vertices(mesh, state, domain);
    let h = domain.dx / (params.ppc as f64).cbrt();
    let bounds = Aabb::from_points(&verts);
    let counts = ((bounds.extent() / h).map(|e| e.ceil() as usize)).map(|c| c.max(1));
    let lattice = |i: usize, j: usize, k: usize| bounds.min + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;

    let inside = match parity_fill(&verts, &mesh.triangles, &bounds, h, counts) {
        Some(inside) => inside,
        None => {
            log::warn!(
                "object {}: mesh is not watertight, using winding-number fill",
                state.object_id
            );
            winding_fill(&verts, &mesh.triangles, counts, &lattice)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ ((state.object_id as u64) << 40));
    let mut positions = Vec::new();
    for i in 0..counts.x {
        for j in 0..counts.y {
            for k in 0..counts.z {
                if inside[(i * counts.y + j) * counts.z + k] {
                    let jitter = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)) * (params.jitter * h);
                    positions.push(lattice(i, j, k) + jitter);
                }
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptySeed(state.object_id));
    }
    if let Some(p) = positions.iter().find(|p| !domain.contains(p)) {
        return Err(Error::OutOfDomain {
            particle: particle_id(state.object_id, 0),
            position: [p.x, p.y, p.z],
        });
    }

    let grid = PointGrid::new(&verts, 2.0 * h);
    let color: Vec<[f64; 3]> = positions
        .iter()
        .map(|p| {
            grid.nearest(p, 1)
                .first()
                .and_then(|&i| mesh.colors.get(i).copied())
                .unwrap_or([0.5; 3])
        })
        .collect();
    let world: Vec<Vector3<f64>> = positions.iter().map(|p| domain.from_sim(p)).collect();
    let velocity: Vec<Vector3<f64>> = per_point_velocity(state, &world)
        .iter()
        .map(|v| domain.vel_to_sim(v))
        .collect();

    let n = positions.len();
    let volume = domain.dx.powi(3) / params.ppc as f64;
    let sim = SimMaterial::from_metric(material, domain.scale);
    Ok(ParticleSet {
        id: (0..n as u32).map(|i| particle_id(state.object_id, i)).collect(),
        x: positions,
        v: velocity,
        f: vec![Matrix3::identity(); n],
        c: vec![Matrix3::zeros(); n],
        mass: vec![sim.density * volume; n],
        volume: vec![volume; n],
        color,
        object_id: vec![state.object_id; n],
        material: vec![0; n],
        materials: vec![sim],
    })
}

/// Scanline parity along +x. Returns `None` when any scanline crosses the
/// surface an odd number of times (open mesh).
fn parity_fill(
    verts: &[Vector3<f64>],
    tris: &[[u32; 3]],
    bounds: &Aabb,
    h: f64,
    counts: Vector3<usize>,
) -> Option<Vec<bool>> {
    // Irrational-ish offsets keep scanlines off mesh edges and vertices.
    let (oy, oz) = (0.5 + 1.234_567e-7, 0.5 + 7.654_321e-7);
    let (ny, nz) = (counts.y, counts.z);
    let mut lines: Vec<Vec<f64>> = vec![Vec::new(); ny * nz];
    for t in tris {
        let [a, b, c] = t.map(|i| verts[i as usize]);
        let ymin = a.y.min(b.y).min(c.y);
        let ymax = a.y.max(b.y).max(c.y);
        let zmin = a.z.min(b.z).min(c.z);
        let zmax = a.z.max(b.z).max(c.z);
        let j0 = (((ymin - bounds.min.y) / h - oy).ceil().max(0.0)) as usize;
        let j1 = (((ymax - bounds.min.y) / h - oy).floor()) as i64;
        let k0 = (((zmin - bounds.min.z) / h - oz).ceil().max(0.0)) as usize;
        let k1 = (((zmax - bounds.min.z) / h - oz).floor()) as i64;
        if j1 < 0 || k1 < 0 {
            continue;
        }
        for j in j0..=(j1 as usize).min(ny - 1) {
            let y = bounds.min.y + (j as f64 + oy) * h;
            for k in k0..=(k1 as usize).min(nz - 1) {
                let z = bounds.min.z + (k as f64 + oz) * h;
                // Barycentric coordinates of (y, z) in the triangle's yz projection.
                let d = (b.y - a.y) * (c.z - a.z) - (c.y - a.y) * (b.z - a.z);
                if d == 0.0 {
                    continue;
                }
                let u = ((y - a.y) * (c.z - a.z) - (c.y - a.y) * (z - a.z)) / d;
                let v = ((b.y - a.y) * (z - a.z) - (y - a.y) * (b.z - a.z)) / d;
                if u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
                    lines[j * nz + k].push(a.x + u * (b.x - a.x) + v * (c.x - a.x));
                }
            }
        }
    }
    let mut inside = vec![false; counts.x * ny * nz];
    for j in 0..ny {
        for k in 0..nz {
            let xs = &mut lines[j * nz + k];
            if xs.len() % 2 == 1 {
                return None;
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks(2) {
                let i0 = ((pair[0] - bounds.min.x) / h - 0.5).ceil().max(0.0) as usize;
                let i1 = ((pair[1] - bounds.min.x) / h - 0.5).floor();
                if i1 < 0.0 {
                    continue;
                }
                for i in i0..=(i1 as usize).min(counts.x - 1) {
                    inside[(i * ny + j) * nz + k] = true;
                }
            }
        }
    }
    Some(inside)
}

/// Generalized winding number `> 1/2` (robust to small holes), brute force over triangles.
fn winding_fill(
    verts: &[Vector3<f64>],
    tris: &[[u32; 3]],
    counts: Vector3<usize>,
    lattice: &(dyn Fn(usize, usize, usize) -> Vector3<f64> + Sync),
) -> Vec<bool> {
    let (ny, nz) = (counts.y, counts.z);
    (0..counts.x * ny * nz)
        .into_par_iter()
        .map(|idx| {
            let p = lattice(idx / (ny * nz), (idx / nz) % ny, idx % nz);
            winding_number(verts, tris, &p).abs() > 0.5
        })
        .collect()
}

pub(crate) fn winding_number(verts: &[Vector3<f64>], tris: &[[u32; 3]], p: &Vector3<f64>) -> f64 {
    let mut total = 0.0;
    for t in tris {
        let [a, b, c] = t.map(|i| verts[i as usize] - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainParams};
    use crate::synth::cube_mesh;

    fn setup(n: usize) -> SimDomain {
        build_domain(
            &Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0)),
            &Aabb::empty(),
            &DomainParams {
                offset: 1.0,
                n,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn state(v: Vector3<f64>, w: Vector3<f64>) -> ObjectInitState {
        ObjectInitState {
            object_id: 3,
            position: Vector3::zeros(),
            scale: 1.0,
            orientation: Matrix3::identity(),
            velocity: v,
            angular_velocity: w,
            rotation_center: Vector3::zeros(),
            anchor: Vector3::zeros(),
        }
    }

    fn rubber() -> MaterialParams {
        MaterialParams {
            density: 1100.0,
            youngs: 1e6,
            poisson: 0.47,
            friction: 0.1,
            damping: 1.0,
        }
    }

    #[test]
    fn cube_count_matches_volume() {
        let d = setup(40);
        assert!((d.dx - 0.05).abs() < 1e-12);
        let mesh = cube_mesh(1, 1.0, [0.2, 0.4, 0.6]);
        let s = state(Vector3::new(0.5, 0.0, 0.0), Vector3::zeros());
        let p = seed_particles(&mesh, &s, &d, &rubber(), &SeedParams::default()).unwrap();
        let expected = 8.0 * 1.0 / d.dx.powi(3);
        assert!((p.len() as f64 - expected).abs() < 0.1 * expected, "{} vs {expected}", p.len());
        assert!(p.v.iter().all(|v| *v == d.vel_to_sim(&Vector3::new(0.5, 0.0, 0.0))));
        assert!(p.color.iter().all(|c| *c == [0.2, 0.4, 0.6]));
        p.validate().unwrap();
    }

    #[test]
    fn open_mesh_uses_winding_fallback() {
        let d = setup(32);
        let mut mesh = cube_mesh(1, 0.8, [1.0; 3]);
        mesh.triangles.truncate(10);
        let s = state(Vector3::zeros(), Vector3::zeros());
        let closed = seed_particles(&cube_mesh(1, 0.8, [1.0; 3]), &s, &d, &rubber(), &SeedParams::default()).unwrap();
        let open = seed_particles(&mesh, &s, &d, &rubber(), &SeedParams::default()).unwrap();
        let ratio = open.len() as f64 / closed.len() as f64;
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn winding_number_of_closed_cube() {
        let mesh = cube_mesh(1, 1.0, [1.0; 3]);
        assert!((winding_number(&mesh.vertices, &mesh.triangles, &Vector3::new(0.1, 0.2, -0.3)).abs() - 1.0).abs() < 1e-9);
        assert!(winding_number(&mesh.vertices, &mesh.triangles, &Vector3::new(2.0, 0.0, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn seeding_is_deterministic() {
        let d = setup(32);
        let mesh = cube_mesh(1, 0.5, [1.0; 3]);
        let s = state(Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));
        let a = seed_particles(&mesh, &s, &d, &rubber(), &SeedParams::default()).unwrap();
        let b = seed_particles(&mesh, &s, &d, &rubber(), &SeedParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let d = setup(32);
        let mesh = cube_mesh(1, 0.5, [1.0; 3]);
        let mut s = state(Vector3::zeros(), Vector3::zeros());
        s.anchor = Vector3::new(0.95, 0.0, 0.0);
        let err = seed_particles(&mesh, &s, &d, &rubber(), &SeedParams::default()).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
    }
}
