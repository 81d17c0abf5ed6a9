//! Dense optical flow: Middlebury `.flo` IO, flow from particle
//! correspondences, and mask-guided fusion of simulator and template flow.

use std::path::Path;

use nalgebra::Vector2;
use rayon::prelude::*;

use super::interp::{Interpolation, SparseField};
use super::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::raster::Raster;

const FLO_MAGIC: f32 = 202021.25;
/// Value written for invalid pixels; anything above `FLO_INVALID_READ` reads back as invalid.
const FLO_INVALID: f32 = 1e10;
const FLO_INVALID_READ: f32 = 1e9;

/// Per-pixel displacement from frame `source` to frame `target`, in pixels.
/// Invalid pixels always hold a zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flow: Raster<[f32; 2]>,
    pub valid: Raster<bool>,
    pub source: usize,
    pub target: usize,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize, source: usize, target: usize) -> Self {
        FlowField {
            flow: Raster::filled(width, height, [0.0; 2]),
            valid: Raster::filled(width, height, false),
            source,
            target,
        }
    }

    pub fn width(&self) -> usize {
        self.flow.width
    }

    pub fn height(&self) -> usize {
        self.flow.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        let f = self.flow.get(x, y);
        self.valid.get(x, y).then(|| Vector2::new(f[0] as f64, f[1] as f64))
    }

    pub fn set(&mut self, x: usize, y: usize, v: Option<Vector2<f64>>) {
        match v {
            Some(v) => {
                *self.flow.get_mut(x, y) = [v.x as f32, v.y as f32];
                *self.valid.get_mut(x, y) = true;
            }
            None => {
                *self.flow.get_mut(x, y) = [0.0; 2];
                *self.valid.get_mut(x, y) = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data.iter().filter(|&&v| v).count()
    }

    /// Magnitudes of all valid vectors, unsorted.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.flow
            .data
            .iter()
            .zip(&self.valid.data)
            .filter(|(_, &v)| v)
            .map(|(f, _)| (f[0] as f64).hypot(f[1] as f64))
            .collect()
    }
}

pub fn write_flo(path: &Path, field: &FlowField) -> Result<()> {
    let (w, h) = (field.width(), field.height());
    let mut buf = Vec::with_capacity(12 + w * h * 8);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for (f, &valid) in field.flow.data.iter().zip(&field.valid.data) {
        let uv = if valid { *f } else { [FLO_INVALID; 2] };
        buf.extend_from_slice(&uv[0].to_le_bytes());
        buf.extend_from_slice(&uv[1].to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a `.flo` file. Components with magnitude above 1e9 or non-finite
/// values mark the pixel invalid.
pub fn read_flo(path: &Path, source: usize, target: usize) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 12 {
        return Err(bad("truncated header"));
    }
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let i32_at = |o: usize| i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if f32_at(0) != FLO_MAGIC {
        return Err(bad("bad magic"));
    }
    let (w, h) = (i32_at(4), i32_at(8));
    if w <= 0 || h <= 0 {
        return Err(bad("non-positive dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + w * h * 8 {
        return Err(bad("size does not match dimensions"));
    }
    let mut field = FlowField::zeros(w, h, source, target);
    for i in 0..w * h {
        let (u, v) = (f32_at(12 + 8 * i), f32_at(16 + 8 * i));
        let ok = |c: f32| c.is_finite() && c.abs() <= FLO_INVALID_READ;
        if ok(u) && ok(v) {
            field.flow.data[i] = [u, v];
            field.valid.data[i] = true;
        }
    }
    Ok(field)
}

/// Dense flow from a `t -> t+1` correspondence set: each particle with a
/// projection in frame `t+1` contributes the sample `p_ref - q` at `q`, and the
/// samples are interpolated from the `k` nearest at every pixel of `mask`.
pub fn correspondences_to_flow(
    corr: &CorrespondenceSet,
    mask: &Raster<u8>,
    k: usize,
    method: Interpolation,
) -> FlowField {
    let (points, values): (Vec<_>, Vec<_>) = corr
        .entries
        .iter()
        .filter_map(|e| e.p_ref.map(|p| (e.q, p - e.q)))
        .unzip();
    let field = SparseField::new(points, values);
    let (w, h) = (mask.width, mask.height);
    let mut out = FlowField::zeros(w, h, corr.frame, corr.reference);
    if field.is_empty() {
        return out;
    }
    let rows: Vec<Vec<Option<Vector2<f64>>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    if *mask.get(x, y) == 0 {
                        return None;
                    }
                    field.interpolate(&Vector2::new(x as f64, y as f64), k, f64::INFINITY, method)
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            out.set(x, y, v);
        }
    }
    out
}

/// Hybrid flow: `sim` on the foreground of `fg_mask`, `template` outside its
/// `dilation`-pixel neighborhood, and a linear blend across the ring between.
/// On a ring pixel at distance `d` from the foreground the weight of `sim` is
/// `1 - d / (dilation + 1)`; where `sim` has no value there, the value at the
/// nearest foreground pixel is used.
pub fn fuse_flow(sim: &FlowField, template: &FlowField, fg_mask: &Raster<u8>, dilation: usize) -> Result<FlowField> {
    if !sim.flow.same_size(&template.flow) || !sim.flow.same_size(fg_mask) {
        return Err(Error::ResolutionMismatch(format!(
            "sim flow {}x{}, template flow {}x{}, mask {}x{}",
            sim.width(),
            sim.height(),
            template.width(),
            template.height(),
            fg_mask.width,
            fg_mask.height
        )));
    }
    let (w, h) = (sim.width(), sim.height());
    let mut out = FlowField::zeros(w, h, template.source, template.target);
    let r = dilation as i64;
    for y in 0..h {
        for x in 0..w {
            if *fg_mask.get(x, y) != 0 {
                out.set(x, y, sim.get(x, y));
                continue;
            }
            // Nearest foreground pixel within the ring, ties broken in scan order.
            let mut nearest: Option<(i64, usize, usize)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let d2 = dx * dx + dy * dy;
                    if d2 > r * r || *fg_mask.get(nx as usize, ny as usize) == 0 {
                        continue;
                    }
                    if nearest.is_none_or(|(b, _, _)| d2 < b) {
                        nearest = Some((d2, nx as usize, ny as usize));
                    }
                }
            }
            let tv = template.get(x, y);
            let Some((d2, nx, ny)) = nearest else {
                out.set(x, y, tv);
                continue;
            };
            let alpha = 1.0 - (d2 as f64).sqrt() / (dilation as f64 + 1.0);
            let sv = sim.get(x, y).or_else(|| sim.get(nx, ny));
            let v = match (sv, tv) {
                (Some(s), Some(t)) => Some(t + alpha * (s - t)),
                (s, t) => s.or(t),
            };
            out.set(x, y, v);
        }
    }
    Ok(out)
}
