use nalgebra::Vector3;
use rayon::prelude::*;

use crate::domain::{SimDomain, DOMAIN_SIZE};
use crate::geometry::{plane_normal, PointGrid};

/// Neighbors used for per-voxel plane fits.
pub const NORMAL_NEIGHBORS: usize = 12;

/// Static environment as node-centred voxel occupancy on the simulation grid,
/// with one outward surface normal per occupied node.
#[derive(Debug, Clone, PartialEq)]
pub struct Collider {
    /// Nodes per axis (`n + 1`).
    pub nodes: usize,
    pub dx: f64,
    /// Per node: index into `normals`, or `u32::MAX` when free.
    slot: Vec<u32>,
    pub normals: Vec<Vector3<f64>>,
    pub friction: f64,
}

impl Collider {
    pub fn empty(domain: &SimDomain, friction: f64) -> Self {
        let nodes = domain.n + 1;
        Collider {
            nodes,
            dx: domain.dx,
            slot: vec![u32::MAX; nodes * nodes * nodes],
            normals: Vec::new(),
            friction,
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.normals.len()
    }

    #[inline]
    pub fn normal_at(&self, node: usize) -> Option<&Vector3<f64>> {
        match self.slot[node] {
            u32::MAX => None,
            s => Some(&self.normals[s as usize]),
        }
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nodes + j) * self.nodes + k
    }

    /// Occupied node coordinates with their normals, in index order.
    pub fn occupied(&self) -> impl Iterator<Item = ([usize; 3], &Vector3<f64>)> + '_ {
        let n = self.nodes;
        self.slot
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != u32::MAX)
            .map(move |(idx, &s)| ([idx / (n * n), (idx / n) % n, idx % n], &self.normals[s as usize]))
    }
}

/// Voxelizes world-space background points in sim space, dilates by one voxel, and fits normals
/// oriented toward `viewpoint_world` (typically the mean camera center).
pub fn build_collider(points_world: &[Vector3<f64>], viewpoint_world: &Vector3<f64>, domain: &SimDomain, friction: f64) -> Collider {
    let mut collider = Collider::empty(domain, friction);
    if points_world.is_empty() {
        log::warn!("empty background cloud: collider has no occupied voxels");
        return collider;
    }
    let mut clamped = 0usize;
    let pts: Vec<Vector3<f64>> = points_world
        .iter()
        .map(|p| {
            let s = domain.to_sim(p);
            if !domain.contains(&s) {
                clamped += 1;
            }
            s.map(|c| c.clamp(0.0, DOMAIN_SIZE))
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} background points outside the domain were clamped");
    }
    let view = domain.to_sim(viewpoint_world);
    let n = collider.nodes;
    let inv_dx = 1.0 / domain.dx;
    let mut occ = vec![false; n * n * n];
    for p in &pts {
        let [i, j, k] = [0, 1, 2].map(|a| ((p[a] * inv_dx).round() as usize).min(n - 1));
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                    if [a, b, c].iter().all(|&v| v >= 0 && v < n as i64) {
                        occ[collider.node_index(a as usize, b as usize, c as usize)] = true;
                    }
                }
            }
        }
    }
    let occupied: Vec<usize> = (0..occ.len()).filter(|&i| occ[i]).collect();
    let grid = PointGrid::new(&pts, domain.dx);
    let normals: Vec<Vector3<f64>> = occupied
        .par_iter()
        .map(|&idx| {
            let center = Vector3::new((idx / (n * n)) as f64, ((idx / n) % n) as f64, (idx % n) as f64) * domain.dx;
            let near = grid.nearest(&center, NORMAL_NEIGHBORS);
            let to_view = view - center;
            let normal = plane_normal(near.iter().map(|&i| pts[i])).unwrap_or_else(|| to_view.normalize());
            if normal.dot(&to_view) < 0.0 {
                -normal
            } else {
                normal
            }
        })
        .collect();
    for (s, &idx) in occupied.iter().enumerate() {
        collider.slot[idx] = s as u32;
    }
    collider.normals = normals;
    collider
}

/// Separate-allowing Coulomb projection of a node velocity against a surface normal.
#[inline]
pub fn project_contact(v: &Vector3<f64>, normal: &Vector3<f64>, friction: f64) -> Vector3<f64> {
    let vn = v.dot(normal);
    if vn >= 0.0 {
        return *v;
    }
    let vt = v - vn * normal;
    let vt_norm = vt.norm();
    if vt_norm <= 0.0 {
        return Vector3::zeros();
    }
    vt * (1.0 - friction * (-vn) / vt_norm).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainParams};
    use crate::geometry::Aabb;

    fn domain() -> SimDomain {
        build_domain(
            &Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0)),
            &Aabb::empty(),
            &DomainParams {
                offset: 1.0,
                n: 32,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn floor_normals_point_up() {
        let d = domain();
        let mut pts = Vec::new();
        for i in 0..60 {
            for k in 0..60 {
                pts.push(Vector3::new(-0.9 + i as f64 * 0.03, -0.3, -0.9 + k as f64 * 0.03));
            }
        }
        let c = build_collider(&pts, &Vector3::new(0.0, 0.8, 0.0), &d, 0.3);
        assert!(c.occupied_count() > 0);
        let floor_j = ((d.to_sim(&pts[0]).y) / d.dx).round() as usize;
        for ([_, j, _], n) in c.occupied() {
            assert!(j.abs_diff(floor_j) <= 1);
            assert!((n.norm() - 1.0).abs() < 1e-6);
            assert!(angle_deg(n, &Vector3::y()) < 5.0, "normal {n:?}");
        }
    }

    #[test]
    fn wall_normals_face_camera() {
        let d = domain();
        let mut pts = Vec::new();
        for i in 0..50 {
            for j in 0..50 {
                pts.push(Vector3::new(-0.8 + i as f64 * 0.03, -0.8 + j as f64 * 0.03, -0.6));
            }
        }
        let c = build_collider(&pts, &Vector3::new(0.1, 0.0, 0.9), &d, 0.3);
        for (_, n) in c.occupied() {
            assert!(angle_deg(n, &Vector3::z()) < 5.0);
        }
    }

    #[test]
    fn empty_cloud_gives_empty_collider() {
        let c = build_collider(&[], &Vector3::zeros(), &domain(), 0.3);
        assert_eq!(c.occupied_count(), 0);
    }

    #[test]
    fn contact_projection_cases() {
        let n = Vector3::y();
        let sep = Vector3::new(1.0, 2.0, 0.0);
        assert_eq!(project_contact(&sep, &n, 0.5), sep);
        assert_eq!(project_contact(&Vector3::new(0.0, -1.0, 0.0), &n, 0.5), Vector3::zeros());
        let v = project_contact(&Vector3::new(2.0, -1.0, 0.0), &n, 0.5);
        assert!((v - Vector3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(project_contact(&Vector3::new(0.1, -1.0, 0.0), &n, 0.5), Vector3::zeros());
    }
}
