//! Texture-consistency targets and the masked texture loss.
//!
//! For every frame after the first, the first template frame is warped onto the
//! simulated object through densified particle correspondences. Foreground
//! pixels without a correspondence fall back to the rendered particle color.
//! The loss is the channel-mean squared error over the counted pixels.

use std::path::Path;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster, RgbRaster};
use crate::render::{CorrespondenceSet, Interpolation, RenderedFrame, SparseField};

pub const SRC_INVALID: u8 = 0;
pub const SRC_FRAME1: u8 = 1;
pub const SRC_RENDER: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Sampling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bilinear" => Ok(Sampling::Bilinear),
            "nearest" => Ok(Sampling::Nearest),
            _ => Err(format!("unknown sampling {s:?} (bilinear | nearest)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetParams {
    /// Nearest sparse correspondences used per pixel.
    pub k: usize,
    /// Search radius in pixels.
    pub radius: f64,
    pub interpolation: Interpolation,
    pub sampling: Sampling,
}

impl Default for TargetParams {
    fn default() -> Self {
        TargetParams {
            k: 4,
            radius: 8.0,
            interpolation: Interpolation::default(),
            sampling: Sampling::default(),
        }
    }
}

/// Per-pixel position in the reference frame, `None` where no correspondence
/// could be interpolated.
pub type DenseMap = Raster<Option<Vector2<f64>>>;

/// Interpolates the reference-frame position of every foreground pixel
/// (`mask != 0`) from the correspondences visible in the reference frame.
pub fn densify_correspondences(
    corr: &CorrespondenceSet,
    mask: &Raster<u8>,
    params: &TargetParams,
) -> DenseMap {
    let (points, values): (Vec<_>, Vec<_>) = corr
        .entries
        .iter()
        .filter(|e| e.visible_ref)
        .filter_map(|e| e.p_ref.map(|p| (e.q, p - e.q)))
        .unzip();
    let field = SparseField::new(points, values);
    let data = (0..mask.data.len())
        .into_par_iter()
        .map(|i| {
            if mask.data[i] == 0 || field.is_empty() {
                return None;
            }
            let q = Vector2::new((i % mask.width) as f64, (i / mask.width) as f64);
            field
                .interpolate(&q, params.k, params.radius, params.interpolation)
                .map(|d| q + d)
        })
        .collect();
    Raster::from_vec(mask.width, mask.height, data)
}

/// Texture-consistent target for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpTarget {
    pub frame: usize,
    pub rgb: RgbRaster,
    /// `SRC_INVALID`, `SRC_FRAME1` or `SRC_RENDER` per pixel.
    pub source: Raster<u8>,
    pub mask: Raster<bool>,
}

impl WarpTarget {
    pub fn counted(&self) -> usize {
        self.source.data.iter().filter(|&&s| s != SRC_INVALID).count()
    }

    pub fn count_of(&self, class: u8) -> usize {
        self.source.data.iter().filter(|&&s| s == class).count()
    }
}

/// Warps `frame1` through `dense` on the rendered foreground of frame `frame`
/// (`render_mask != 0`), falling back to `render_rgb` where the warp is undefined.
pub fn build_warp_target(
    frame1: &RgbRaster,
    dense: &DenseMap,
    render_rgb: &RgbRaster,
    render_mask: &Raster<u8>,
    frame: usize,
    sampling: Sampling,
) -> Result<WarpTarget> {
    if !frame1.same_size(dense) || !frame1.same_size(render_rgb) || !frame1.same_size(render_mask) {
        return Err(Error::ResolutionMismatch(format!(
            "frame1 {}x{}, dense map {}x{}, render {}x{}, mask {}x{}",
            frame1.width,
            frame1.height,
            dense.width,
            dense.height,
            render_rgb.width,
            render_rgb.height,
            render_mask.width,
            render_mask.height
        )));
    }
    let (w, h) = (frame1.width, frame1.height);
    let mut rgb = Raster::filled(w, h, [0.0; 3]);
    let mut source = Raster::filled(w, h, SRC_INVALID);
    let mask = Raster::from_vec(w, h, render_mask.data.iter().map(|&m| m != 0).collect());
    for i in 0..w * h {
        if !mask.data[i] {
            continue;
        }
        let warped = dense.data[i].and_then(|p| match sampling {
            Sampling::Bilinear => frame1.sample_bilinear(p.x, p.y),
            Sampling::Nearest => frame1.sample_nearest(p.x, p.y),
        });
        match warped {
            Some(c) => {
                rgb.data[i] = c;
                source.data[i] = SRC_FRAME1;
            }
            None => {
                rgb.data[i] = render_rgb.data[i];
                source.data[i] = SRC_RENDER;
            }
        }
    }
    Ok(WarpTarget {
        frame,
        rgb,
        source,
        mask,
    })
}

/// Targets for every rendered frame after the reference frame 0.
pub fn build_targets(
    frame1: &RgbRaster,
    correspondences: &[CorrespondenceSet],
    renders: &[RenderedFrame],
    params: &TargetParams,
) -> Result<Vec<WarpTarget>> {
    correspondences
        .par_iter()
        .map(|corr| {
            let render = renders
                .iter()
                .find(|r| r.frame == corr.frame)
                .ok_or_else(|| Error::validation(format!("no render for frame {}", corr.frame)))?;
            let dense = densify_correspondences(corr, &render.mask, params);
            build_warp_target(frame1, &dense, &render.rgb, &render.mask, render.frame, params.sampling)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    /// 1-based frame number.
    pub t: usize,
    pub l_tex: f64,
    pub n_frame1: usize,
    pub n_render: usize,
    /// Sum of squared channel differences before normalization.
    pub raw_sum: f64,
    pub l_frame1: f64,
    pub l_render: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_frame: Vec<FrameLoss>,
    pub l_ttco: f64,
    pub raw_sum: f64,
}

impl LossReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[inline]
fn sq_diff(c: &[f64; 3], y: &[f64; 3]) -> f64 {
    let (dr, dg, db) = (c[0] - y[0], c[1] - y[1], c[2] - y[2]);
    dr * dr + dg * dg + db * db
}

fn frame_loss(candidate: &RgbRaster, target: &WarpTarget) -> FrameLoss {
    let (mut sum, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let (mut n1, mut n2) = (0usize, 0usize);
    for i in 0..target.source.data.len() {
        match target.source.data[i] {
            SRC_FRAME1 => {
                let d = sq_diff(&candidate.data[i], &target.rgb.data[i]);
                sum += d;
                s1 += d;
                n1 += 1;
            }
            SRC_RENDER => {
                let d = sq_diff(&candidate.data[i], &target.rgb.data[i]);
                sum += d;
                s2 += d;
                n2 += 1;
            }
            _ => {}
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / (3 * n) as f64 };
    FrameLoss {
        t: target.frame + 1,
        l_tex: mean(sum, n1 + n2),
        n_frame1: n1,
        n_render: n2,
        raw_sum: sum,
        l_frame1: mean(s1, n1),
        l_render: mean(s2, n2),
    }
}

fn check_inputs(candidate: &[RgbRaster], targets: &[WarpTarget]) -> Result<()> {
    for t in targets {
        let c = candidate.get(t.frame).ok_or_else(|| {
            Error::validation(format!(
                "candidate video has {} frames, target needs frame {}",
                candidate.len(),
                t.frame + 1
            ))
        })?;
        if !c.same_size(&t.rgb) || !t.rgb.same_size(&t.source) {
            return Err(Error::ResolutionMismatch(format!(
                "frame {}: candidate {}x{}, target {}x{}",
                t.frame + 1,
                c.width,
                c.height,
                t.rgb.width,
                t.rgb.height
            )));
        }
    }
    Ok(())
}

/// Per-frame texture loss (channel-mean squared error over counted pixels,
/// summed in row-major order) and their total over the targets in order.
/// A frame without counted pixels contributes 0.
pub fn eval_loss(candidate: &[RgbRaster], targets: &[WarpTarget]) -> Result<LossReport> {
    check_inputs(candidate, targets)?;
    let per_frame: Vec<FrameLoss> = targets
        .par_iter()
        .map(|t| frame_loss(&candidate[t.frame], t))
        .collect();
    if per_frame.iter().all(|f| f.n_frame1 + f.n_render == 0) {
        return Err(Error::EmptyLossSupport);
    }
    let l_ttco = per_frame.iter().fold(0.0, |a, f| a + f.l_tex);
    let raw_sum = per_frame.iter().fold(0.0, |a, f| a + f.raw_sum);
    Ok(LossReport {
        per_frame,
        l_ttco,
        raw_sum,
    })
}

/// Gradient of the total loss with respect to each candidate frame's pixels:
/// `2 (c - y) / (3 n_t)` on counted pixels, zero elsewhere. Frames without a
/// target get an all-zero gradient.
pub fn loss_gradient(candidate: &[RgbRaster], targets: &[WarpTarget]) -> Result<Vec<RgbRaster>> {
    check_inputs(candidate, targets)?;
    let mut grad: Vec<RgbRaster> = candidate
        .iter()
        .map(|c| Raster::filled(c.width, c.height, [0.0; 3]))
        .collect();
    for t in targets {
        let n = t.counted();
        if n == 0 {
            continue;
        }
        let scale = 2.0 / (3 * n) as f64;
        let (c, g) = (&candidate[t.frame], &mut grad[t.frame]);
        for i in 0..t.source.data.len() {
            if t.source.data[i] != SRC_INVALID {
                for k in 0..3 {
                    g.data[i][k] += scale * (c.data[i][k] - t.rgb.data[i][k]);
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub video: Vec<RgbRaster>,
    /// Loss before the first step followed by the loss after each step.
    pub losses: Vec<f64>,
    /// Step size in effect at the end.
    pub lr: f64,
}

const MAX_HALVINGS: usize = 60;

/// Gradient descent on the candidate pixels. A step that would raise the loss
/// is retried with half the step size, so the loss curve never increases.
/// Pixels outside every target's counted set are never written.
pub fn descend_on_pixels(candidate: &[RgbRaster], targets: &[WarpTarget], steps: usize, lr: f64) -> Result<Descent> {
    if steps == 0 {
        return Err(Error::validation("descent needs at least one step"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::validation(format!("learning rate must be positive, got {lr}")));
    }
    let mut video = candidate.to_vec();
    let mut loss = eval_loss(&video, targets)?.l_ttco;
    let mut losses = vec![loss];
    let mut lr = lr;
    for _ in 0..steps {
        let grad = loss_gradient(&video, targets)?;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut trial = video.clone();
            for t in targets {
                let (v, g) = (&mut trial[t.frame], &grad[t.frame]);
                for i in 0..t.source.data.len() {
                    if t.source.data[i] != SRC_INVALID {
                        for k in 0..3 {
                            v.data[i][k] -= lr * g.data[i][k];
                        }
                    }
                }
            }
            let trial_loss = eval_loss(&trial, targets)?.l_ttco;
            if trial_loss <= loss {
                video = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            log::debug!("descent stalled at loss {loss:e}");
        }
        losses.push(loss);
    }
    Ok(Descent { video, losses, lr })
}

/// Writes `targets/%04d.png` and `targets/%04d.src.png` (1-based frame numbers)
/// under `dir`.
pub fn save_targets(dir: &Path, targets: &[WarpTarget]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in targets {
        t.rgb.save_png(&dir.join(format!("{:04}.png", t.frame + 1)))?;
        t.source.save_png(&dir.join(format!("{:04}.src.png", t.frame + 1)))?;
    }
    Ok(())
}

/// Reads every `%04d.png` / `%04d.src.png` pair in `dir`, ordered by frame.
pub fn load_targets(dir: &Path) -> Result<Vec<WarpTarget>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png").filter(|s| !s.ends_with(".src")) {
            if let Ok(n) = stem.parse::<usize>() {
                if n >= 1 {
                    frames.push(n);
                }
            }
        }
    }
    frames.sort_unstable();
    frames
        .into_iter()
        .map(|n| {
            let rgb = RgbRaster::load_png(&dir.join(format!("{n:04}.png")))?;
            let src_path = dir.join(format!("{n:04}.src.png"));
            if !src_path.exists() {
                return Err(Error::IncompleteBundle(src_path));
            }
            let source = Raster::<u8>::load_png(&src_path)?;
            if !rgb.same_size(&source) {
                return Err(Error::ResolutionMismatch(format!("target {n:04} and its source map differ in size")));
            }
            if let Some(bad) = source.data.iter().find(|&&s| s > SRC_RENDER) {
                return Err(Error::Format(format!("source map {n:04} holds class {bad}")));
            }
            let mask = Raster::from_vec(source.width, source.height, source.data.iter().map(|&s| s != 0).collect());
            Ok(WarpTarget {
                frame: n - 1,
                rgb,
                source,
                mask,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{CorrEntry, NO_PARTICLE};

    fn render_with(w: usize, h: usize, frame: usize, fg: impl Fn(usize, usize) -> bool) -> RenderedFrame {
        let mut mask = Raster::filled(w, h, 0u8);
        let mut rgb = Raster::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                if fg(x, y) {
                    *mask.get_mut(x, y) = 1;
                    *rgb.get_mut(x, y) = [0.9, 0.1, 0.2];
                }
            }
        }
        RenderedFrame {
            frame,
            rgb,
            mask,
            depth: Raster::filled(w, h, f32::INFINITY),
            owner: Raster::filled(w, h, NO_PARTICLE),
            splat_radius: 1.0,
        }
    }

    fn gradient_image(w: usize, h: usize) -> RgbRaster {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                [x / w as f64, y / h as f64, 0.5]
            })
            .collect();
        Raster::from_vec(w, h, data)
    }

    fn corr_from(frame: usize, f: impl Fn(Vector2<f64>) -> Vector2<f64>, step: usize, w: usize, h: usize) -> CorrespondenceSet {
        let mut entries = Vec::new();
        for y in (0..h).step_by(step) {
            for x in (0..w).step_by(step) {
                let q = Vector2::new(x as f64 + 0.25, y as f64 + 0.5);
                entries.push(CorrEntry {
                    id: entries.len() as u64,
                    p_ref: Some(f(q)),
                    q,
                    visible_ref: true,
                });
            }
        }
        CorrespondenceSet {
            frame,
            reference: 0,
            entries,
        }
    }

    #[test]
    fn identity_densifies_to_identity() {
        let r = render_with(32, 32, 1, |_, _| true);
        let corr = corr_from(1, |q| q, 3, 32, 32);
        let dense = densify_correspondences(&corr, &r.mask, &TargetParams::default());
        for (i, p) in dense.data.iter().enumerate() {
            let q = Vector2::new((i % 32) as f64, (i / 32) as f64);
            assert!((p.unwrap() - q).norm() < 1e-3);
        }
    }

    #[test]
    fn affine_correspondence_is_reproduced() {
        let f = |q: Vector2<f64>| Vector2::new(1.02 * q.x - 0.05 * q.y + 1.5, 0.03 * q.x + 0.97 * q.y - 2.0);
        let r = render_with(40, 40, 2, |x, y| (6..34).contains(&x) && (6..34).contains(&y));
        let corr = corr_from(2, f, 4, 40, 40);
        let dense = densify_correspondences(&corr, &r.mask, &TargetParams::default());
        for y in 6..34 {
            for x in 6..34 {
                let q = Vector2::new(x as f64, y as f64);
                assert!((dense.get(x, y).unwrap() - f(q)).norm() < 0.1);
            }
        }
        assert!(dense.get(0, 0).is_none());
    }

    #[test]
    fn invisible_samples_are_ignored() {
        let r = render_with(16, 16, 1, |_, _| true);
        let mut corr = corr_from(1, |q| q, 2, 16, 16);
        for e in &mut corr.entries {
            e.visible_ref = false;
        }
        let dense = densify_correspondences(&corr, &r.mask, &TargetParams::default());
        assert!(dense.data.iter().all(Option::is_none));
    }

    #[test]
    fn fallback_classes() {
        let frame1 = gradient_image(20, 10);
        let r = render_with(20, 10, 3, |x, _| x >= 5);
        let ident: DenseMap = Raster::from_vec(
            20,
            10,
            (0..200).map(|i| Some(Vector2::new((i % 20) as f64, (i / 20) as f64))).collect(),
        );
        let t = build_warp_target(&frame1, &ident, &r.rgb, &r.mask, r.frame, Sampling::Bilinear).unwrap();
        for i in 0..200 {
            if i % 20 >= 5 {
                assert_eq!(t.source.data[i], SRC_FRAME1);
                assert_eq!(t.rgb.data[i], frame1.data[i]);
            } else {
                assert_eq!(t.source.data[i], SRC_INVALID);
            }
        }
        let none: DenseMap = Raster::filled(20, 10, None);
        let t = build_warp_target(&frame1, &none, &r.rgb, &r.mask, r.frame, Sampling::Nearest).unwrap();
        assert_eq!(t.count_of(SRC_RENDER), 150);
        assert!(t.rgb.data.iter().zip(&t.source.data).all(|(c, &s)| s != SRC_RENDER || *c == [0.9, 0.1, 0.2]));
    }

    fn simple_target(frame: usize) -> WarpTarget {
        let r = render_with(8, 8, frame, |x, y| x + y < 8);
        let none: DenseMap = Raster::filled(8, 8, None);
        build_warp_target(&gradient_image(8, 8), &none, &r.rgb, &r.mask, r.frame, Sampling::Bilinear).unwrap()
    }

    #[test]
    fn constant_offset_gives_channel_mean() {
        let targets = vec![simple_target(1), simple_target(2)];
        let mut video = vec![Raster::filled(8, 8, [0.0; 3]); 3];
        for t in &targets {
            for i in 0..64 {
                video[t.frame].data[i] = t.rgb.data[i].map(|c| c - 0.1);
            }
        }
        let rep = eval_loss(&video, &targets).unwrap();
        for f in &rep.per_frame {
            assert!((f.l_tex - 0.01).abs() < 1e-12);
            assert_eq!(f.n_frame1, 0);
            assert_eq!(f.n_render, 36);
        }
        assert_eq!(rep.l_ttco, rep.per_frame[0].l_tex + rep.per_frame[1].l_tex);
    }

    #[test]
    fn exact_quadratic_step() {
        let targets = vec![simple_target(1)];
        let video = vec![Raster::filled(8, 8, [0.3; 3]); 2];
        let n = targets[0].counted() as f64 * 3.0;
        let d = descend_on_pixels(&video, &targets, 1, n / 2.0).unwrap();
        assert!(d.losses[1] < 1e-28, "{:?}", d.losses);
    }

    #[test]
    fn empty_support_and_mismatch() {
        let r = render_with(8, 8, 1, |_, _| false);
        let t = build_warp_target(&gradient_image(8, 8), &Raster::filled(8, 8, None), &r.rgb, &r.mask, r.frame, Sampling::Bilinear).unwrap();
        let video = vec![Raster::filled(8, 8, [0.0; 3]); 2];
        assert!(matches!(eval_loss(&video, &[t]), Err(Error::EmptyLossSupport)));
        let small = vec![Raster::filled(4, 4, [0.0; 3]); 3];
        assert!(matches!(eval_loss(&small, &[simple_target(1)]), Err(Error::ResolutionMismatch(_))));
        assert!(eval_loss(&video, &[simple_target(5)]).is_err());
    }

    #[test]
    fn target_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = simple_target(4);
        t.rgb.data.iter_mut().for_each(|c| *c = c.map(|v| crate::raster::quantize(v) as f64 / 255.0));
        save_targets(dir.path(), std::slice::from_ref(&t)).unwrap();
        assert!(dir.path().join("0005.src.png").exists());
        let back = load_targets(dir.path()).unwrap();
        assert_eq!(back, vec![t]);
    }
}
