//! Sparse-to-dense interpolation of 2D vector samples over the image plane.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Plain inverse-distance weighting.
    Idw,
    /// Inverse-distance-weighted local affine fit; reproduces affine fields
    /// exactly inside the neighbors' hull and falls back to `Idw` when the
    /// neighbors are collinear. The result is clamped to the neighbors' value
    /// range per component, so extrapolation cannot overshoot.
    #[default]
    IdwAffine,
}

impl std::str::FromStr for Interpolation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "idw" => Ok(Interpolation::Idw),
            "idw_affine" => Ok(Interpolation::IdwAffine),
            _ => Err(format!("unknown interpolation {s:?} (idw | idw_affine)")),
        }
    }
}

/// Vector-valued samples at pixel positions, bucketed for k-nearest queries.
#[derive(Debug, Clone)]
pub struct SparseField {
    points: Vec<Vector2<f64>>,
    values: Vec<Vector2<f64>>,
    cell: f64,
    origin: Vector2<i64>,
    dims: Vector2<usize>,
    starts: Vec<u32>,
    order: Vec<u32>,
}

const BUCKET_PX: f64 = 4.0;

impl SparseField {
    pub fn new(points: Vec<Vector2<f64>>, values: Vec<Vector2<f64>>) -> Self {
        assert_eq!(points.len(), values.len());
        let cell = BUCKET_PX;
        let bucket = |p: &Vector2<f64>| Vector2::new((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
        let (mut lo, mut hi) = (Vector2::repeat(i64::MAX), Vector2::repeat(i64::MIN));
        for p in &points {
            let b = bucket(p);
            lo = lo.inf(&b);
            hi = hi.sup(&b);
        }
        if points.is_empty() {
            lo = Vector2::zeros();
            hi = Vector2::zeros();
        }
        let dims = Vector2::new((hi.x - lo.x + 1) as usize, (hi.y - lo.y + 1) as usize);
        let slot = |p: &Vector2<f64>| {
            let b = bucket(p) - lo;
            b.y as usize * dims.x + b.x as usize
        };
        let mut counts = vec![0u32; dims.x * dims.y + 1];
        for p in &points {
            counts[slot(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let s = slot(p);
            order[fill[s] as usize] = i as u32;
            fill[s] += 1;
        }
        SparseField {
            points,
            values,
            cell,
            origin: lo,
            dims,
            starts: counts,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Up to `k` nearest samples within `radius` as `(squared distance, index)`,
    /// sorted by distance then index.
    pub fn nearest(&self, q: &Vector2<f64>, k: usize, radius: f64) -> Vec<(f64, usize)> {
        let mut found: Vec<(f64, usize)> = Vec::new();
        if self.points.is_empty() || k == 0 {
            return found;
        }
        let r2 = radius * radius;
        let qb = Vector2::new((q.x / self.cell).floor() as i64, (q.y / self.cell).floor() as i64) - self.origin;
        let max_ring = self.dims.x.max(self.dims.y) as i64 + qb.x.abs().max(qb.y.abs()) + 1;
        let mut ring = 0i64;
        loop {
            for by in (qb.y - ring)..=(qb.y + ring) {
                for bx in (qb.x - ring)..=(qb.x + ring) {
                    if (by - qb.y).abs() != ring && (bx - qb.x).abs() != ring {
                        continue;
                    }
                    if bx < 0 || by < 0 || bx >= self.dims.x as i64 || by >= self.dims.y as i64 {
                        continue;
                    }
                    let s = by as usize * self.dims.x + bx as usize;
                    for &i in &self.order[self.starts[s] as usize..self.starts[s + 1] as usize] {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        if d2 <= r2 {
                            found.push((d2, i as usize));
                        }
                    }
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.truncate(k);
            // Everything outside the scanned rings is at least `ring * cell` away.
            let reach = ring as f64 * self.cell;
            let done_k = found.len() == k && found[k - 1].0 <= reach * reach;
            if done_k || reach * reach > r2 || ring > max_ring {
                return found;
            }
            ring += 1;
        }
    }

    /// Interpolated value at `q` from the `k` nearest samples within `radius`.
    pub fn interpolate(&self, q: &Vector2<f64>, k: usize, radius: f64, method: Interpolation) -> Option<Vector2<f64>> {
        let near = self.nearest(q, k, radius);
        if near.is_empty() {
            return None;
        }
        if near[0].0 < 1e-18 {
            return Some(self.values[near[0].1]);
        }
        if method == Interpolation::IdwAffine && near.len() >= 3 {
            if let Some(v) = self.affine_fit(q, &near) {
                return Some(v);
            }
        }
        let (mut wsum, mut acc) = (0.0, Vector2::zeros());
        for &(d2, i) in &near {
            let w = 1.0 / d2;
            wsum += w;
            acc += w * self.values[i];
        }
        Some(acc / wsum)
    }

    fn affine_fit(&self, q: &Vector2<f64>, near: &[(f64, usize)]) -> Option<Vector2<f64>> {
        // Weighted least squares of value = a + B (p - q); the value at q is `a`.
        let mut m = Matrix3::zeros();
        let mut rhs_u = Vector3::zeros();
        let mut rhs_v = Vector3::zeros();
        let scale = near.last().unwrap().0.sqrt().max(1e-12);
        for &(d2, i) in near {
            let w = 1.0 / d2;
            let d = (self.points[i] - q) / scale;
            let row = Vector3::new(1.0, d.x, d.y);
            m += w * row * row.transpose();
            rhs_u += w * self.values[i].x * row;
            rhs_v += w * self.values[i].y * row;
        }
        let eig = SymmetricEigen::new(m);
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        if !(lo > 1e-8 * hi) {
            return None;
        }
        let inv = m.try_inverse()?;
        let a = Vector2::new((inv * rhs_u).x, (inv * rhs_v).x);
        if !a.iter().all(|c| c.is_finite()) {
            return None;
        }
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for &(_, i) in near {
            lo = lo.inf(&self.values[i]);
            hi = hi.sup(&self.values[i]);
        }
        Some(a.sup(&lo).inf(&hi))
    }
}
