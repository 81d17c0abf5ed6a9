//! Shared geometric primitives: boxes, a uniform-grid point index and the
//! minimal enclosing sphere.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Axis-aligned box. An empty box has `min > max` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.include(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| !(self.min[i] <= self.max[i]))
    }

    pub fn include(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vector3<f64> {
        if self.is_empty() {
            Vector3::zeros()
        } else {
            self.max - self.min
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Uniform hash grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key_of(p, cell)).or_default().push(i as u32);
        }
        PointGrid {
            points,
            cell,
            cells,
        }
    }

    fn key_of(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Number of points other than `exclude` within `radius` of `q`.
    pub fn count_within(&self, q: &Vector3<f64>, radius: f64, exclude: Option<usize>) -> usize {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let k = Self::key_of(q, self.cell);
        let mut n = 0;
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        n += ids
                            .iter()
                            .filter(|&&i| {
                                Some(i as usize) != exclude
                                    && (self.points[i as usize] - q).norm_squared() <= r2
                            })
                            .count();
                    }
                }
            }
        }
        n
    }

    /// Indices of the `k` nearest points to `q`, nearest first (ties by index).
    pub fn nearest(&self, q: &Vector3<f64>, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = Self::key_of(q, self.cell);
        let mut found: Vec<(f64, u32)> = Vec::new();
        let mut ring = 0i64;
        loop {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            found.extend(
                                ids.iter()
                                    .map(|&i| ((self.points[i as usize] - q).norm_squared(), i)),
                            );
                        }
                    }
                }
            }
            // Every point outside the scanned cube is at least `ring * cell` away.
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let safe = (ring as f64 * self.cell).powi(2);
                if found[k - 1].0 <= safe || found.len() == self.points.len() {
                    break;
                }
            }
            if found.len() == self.points.len() {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                break;
            }
            ring += 1;
        }
        found.truncate(k);
        found.into_iter().map(|(_, i)| i as usize).collect()
    }
}

/// Least-squares plane normal (unit, sign arbitrary) of a point set.
pub fn plane_normal(points: impl Iterator<Item = Vector3<f64>> + Clone) -> Option<Vector3<f64>> {
    let n = points.clone().count();
    if n < 3 {
        return None;
    }
    let mean = points.clone().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let cov = points.fold(Matrix3::zeros(), |a, p| {
        let d = p - mean;
        a + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(i).into_owned();
    let norm = v.norm();
    (norm > 0.0 && norm.is_finite()).then(|| v / norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Sphere {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        (p - self.center).norm() <= self.radius * (1.0 + 1e-10) + 1e-12
    }
}

/// Minimal enclosing sphere (Welzl's algorithm, iterative over a seeded shuffle).
pub fn bounding_sphere(points: &[Vector3<f64>], seed: u64) -> Option<Sphere> {
    if points.is_empty() {
        return None;
    }
    let mut pts = points.to_vec();
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut boundary = Vec::with_capacity(4);
    Some(welzl(&pts, pts.len(), &mut boundary))
}

fn welzl(pts: &[Vector3<f64>], n: usize, boundary: &mut Vec<Vector3<f64>>) -> Sphere {
    let mut s = sphere_from(boundary);
    if boundary.len() == 4 {
        return s;
    }
    for i in 0..n {
        if !s.contains(&pts[i]) {
            boundary.push(pts[i]);
            s = welzl(pts, i, boundary);
            boundary.pop();
        }
    }
    s
}

fn sphere_from(b: &[Vector3<f64>]) -> Sphere {
    match b {
        [] => Sphere {
            center: Vector3::zeros(),
            radius: -1.0,
        },
        [a] => Sphere {
            center: *a,
            radius: 0.0,
        },
        [a, c] => Sphere {
            center: 0.5 * (a + c),
            radius: 0.5 * (a - c).norm(),
        },
        [a, b2, c] => circumcircle(a, b2, c),
        [a, b2, c, d] => circumsphere(a, b2, c, d).unwrap_or_else(|| {
            // Coplanar support set: the largest of the face circles encloses all four.
            [
                circumcircle(a, b2, c),
                circumcircle(a, b2, d),
                circumcircle(a, c, d),
                circumcircle(b2, c, d),
            ]
            .into_iter()
            .filter(|s| [a, b2, c, d].iter().all(|p| s.contains(p)))
            .min_by(|x, y| x.radius.total_cmp(&y.radius))
            .unwrap_or_else(|| circumcircle(a, b2, c))
        }),
        _ => unreachable!("support set has at most four points"),
    }
}

fn circumcircle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Sphere {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let denom = 2.0 * n.norm_squared();
    if denom <= 1e-300 {
        // Collinear: the farthest pair spans the circle.
        let pairs = [(a, b), (a, c), (b, c)];
        let (p, q) = pairs
            .into_iter()
            .max_by(|x, y| (x.0 - x.1).norm().total_cmp(&(y.0 - y.1).norm()))
            .unwrap();
        return Sphere {
            center: 0.5 * (p + q),
            radius: 0.5 * (p - q).norm(),
        };
    }
    let offset = (n.cross(&ab) * ac.norm_squared() + ac.cross(&n) * ab.norm_squared()) / denom;
    Sphere {
        center: a + offset,
        radius: offset.norm(),
    }
}

fn circumsphere(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    d: &Vector3<f64>,
) -> Option<Sphere> {
    let m = Matrix3::from_rows(&[
        (b - a).transpose(),
        (c - a).transpose(),
        (d - a).transpose(),
    ]);
    let rhs = 0.5
        * Vector3::new(
            (b - a).norm_squared(),
            (c - a).norm_squared(),
            (d - a).norm_squared(),
        );
    let scale = m.abs().max().powi(3);
    if m.determinant().abs() <= 1e-12 * scale {
        return None;
    }
    let off = m.lu().solve(&rhs)?;
    Some(Sphere {
        center: a + off,
        radius: off.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn bounding_sphere_of_cube_corners() {
        let b = Aabb::new(Vector3::zeros(), Vector3::repeat(2.0));
        let s = bounding_sphere(&b.corners(), 1).unwrap();
        assert_relative_eq!(s.center, Vector3::repeat(1.0), epsilon = 1e-12);
        assert_relative_eq!(s.radius, 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bounding_sphere_encloses_and_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..500)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                v.normalize() * 0.7 + Vector3::new(3.0, -1.0, 2.0)
            })
            .collect();
        let s = bounding_sphere(&pts, 9).unwrap();
        assert!(pts.iter().all(|p| (p - s.center).norm() <= s.radius + 1e-9));
        assert!((s.radius - 0.7).abs() < 1e-3);
    }

    #[test]
    fn hemisphere_bound_is_rim_circle() {
        let pts: Vec<_> = (0..40)
            .flat_map(|i| {
                (0..80).map(move |j| {
                    let th = 0.5 * std::f64::consts::PI * i as f64 / 39.0;
                    let ph = 2.0 * std::f64::consts::PI * j as f64 / 80.0;
                    Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos())
                })
            })
            .collect();
        let s = bounding_sphere(&pts, 2).unwrap();
        assert_relative_eq!(s.radius, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..300)
            .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.1))
            .collect();
        let grid = PointGrid::new(&pts, 0.05);
        for _ in 0..50 {
            let q = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), 0.5);
            let mut brute: Vec<usize> = (0..pts.len()).collect();
            brute.sort_by(|&a, &b| {
                (pts[a] - q).norm_squared().total_cmp(&(pts[b] - q).norm_squared())
            });
            assert_eq!(grid.nearest(&q, 12), brute[..12].to_vec());
        }
    }

    #[test]
    fn plane_normal_of_tilted_plane() {
        let n = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let u = n.cross(&Vector3::x()).normalize();
        let v = n.cross(&u);
        let pts: Vec<_> = (0..20)
            .map(|i| u * (i % 5) as f64 + v * (i / 5) as f64)
            .collect();
        let m = plane_normal(pts.iter().copied()).unwrap();
        assert_relative_eq!(m.dot(&n).abs(), 1.0, epsilon = 1e-9);
    }
}
