//! Z-buffered point splatting of particle trajectories, particle-ID pixel
//! correspondences, optical flow from correspondences, and hybrid flow fusion.

mod flow;
mod interp;

pub use flow::{correspondences_to_flow, fuse_flow, read_flo, write_flo, FlowField};
pub use interp::{Interpolation, SparseField};

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mpm::SimTrajectory;
use crate::raster::{Raster, RgbRaster};
use crate::scene::CameraFrame;

pub const NO_PARTICLE: u32 = u32::MAX;

/// Output of one splatting pass. Depth is camera-space z in the camera's units.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub frame: usize,
    pub rgb: RgbRaster,
    /// Object ID of the winning splat, 0 for background.
    pub mask: Raster<u8>,
    /// `+inf` where no splat landed.
    pub depth: Raster<f32>,
    /// Index (into the trajectory's particle arrays) of the winning splat.
    pub owner: Raster<u32>,
    pub splat_radius: f64,
}

/// Default splat radius `max(1, round(0.6 * fx * spacing / median_depth))` px.
pub fn default_splat_radius(fx: f64, spacing: f64, median_depth: f64) -> f64 {
    (0.6 * fx * spacing / median_depth).round().max(1.0)
}

/// Median camera-space depth of the particles in front of `camera`.
pub fn median_depth(positions: &[Vector3<f64>], camera: &CameraFrame) -> Option<f64> {
    let mut z: Vec<f64> = positions.iter().filter_map(|p| camera.project(p).map(|(_, z)| z)).collect();
    if z.is_empty() {
        return None;
    }
    z.sort_by(f64::total_cmp);
    Some(z[z.len() / 2])
}

/// Splats every particle as a disc of `splat_radius` px; the nearest splat wins
/// each pixel, with ties going to the lower particle ID.
pub fn render_points(
    positions: &[Vector3<f64>],
    colors: &[[f64; 3]],
    object_ids: &[u32],
    ids: &[u64],
    camera: &CameraFrame,
    splat_radius: f64,
    frame: usize,
) -> RenderedFrame {
    let (w, h) = (camera.width, camera.height);
    let mut best: Raster<(f64, u64, u32)> = Raster::filled(w, h, (f64::INFINITY, u64::MAX, NO_PARTICLE));
    let r2 = splat_radius * splat_radius;
    for (i, p) in positions.iter().enumerate() {
        let Some((q, z)) = camera.project(p) else {
            continue;
        };
        let y0 = (q.y - splat_radius).ceil().max(0.0);
        let y1 = (q.y + splat_radius).floor().min(h as f64 - 1.0);
        let x0 = (q.x - splat_radius).ceil().max(0.0);
        let x1 = (q.x + splat_radius).floor().min(w as f64 - 1.0);
        if y0 > y1 || x0 > x1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let d2 = (x as f64 - q.x).powi(2) + (y as f64 - q.y).powi(2);
                if d2 > r2 {
                    continue;
                }
                let cell = best.get_mut(x, y);
                if (z, ids[i]) < (cell.0, cell.1) {
                    *cell = (z, ids[i], i as u32);
                }
            }
        }
    }
    let owner = Raster::from_vec(w, h, best.data.iter().map(|c| c.2).collect());
    let pick = |f: &dyn Fn(usize) -> [f64; 3]| {
        Raster::from_vec(
            w,
            h,
            owner.data.iter().map(|&o| if o == NO_PARTICLE { [0.0; 3] } else { f(o as usize) }).collect(),
        )
    };
    RenderedFrame {
        frame,
        rgb: pick(&|i| colors[i]),
        mask: Raster::from_vec(
            w,
            h,
            owner.data.iter().map(|&o| if o == NO_PARTICLE { 0 } else { object_ids[o as usize] as u8 }).collect(),
        ),
        depth: Raster::from_vec(w, h, best.data.iter().map(|c| c.0 as f32).collect()),
        owner,
        splat_radius,
    }
}

pub fn render_frame(traj: &SimTrajectory, t: usize, camera: &CameraFrame, splat_radius: f64) -> RenderedFrame {
    render_points(
        &traj.frames[t].x,
        &traj.colors,
        &traj.object_ids,
        &traj.ids,
        camera,
        splat_radius,
        t,
    )
}

/// Renders every frame in parallel; `cameras[t]` is used for frame `t`.
pub fn render_all(traj: &SimTrajectory, cameras: &[CameraFrame], splat_radius: f64) -> Vec<RenderedFrame> {
    (0..traj.num_frames())
        .into_par_iter()
        .map(|t| render_frame(traj, t, &cameras[t], splat_radius))
        .collect()
}

/// Projection of particle `i` if it is visible in `render`: its rounded pixel
/// carries its object ID and its depth lies within one splat radius (in depth
/// units) of the z-buffer.
pub fn visible_projection(
    x: &Vector3<f64>,
    object_id: u32,
    camera: &CameraFrame,
    render: &RenderedFrame,
) -> Option<Vector2<f64>> {
    let (q, z) = camera.project(x)?;
    let (px, py) = render.mask.pixel_at(q.x, q.y)?;
    if *render.mask.get(px, py) as u32 != object_id {
        return None;
    }
    let tol = render.splat_radius * z / camera.intrinsics.fx;
    (z <= *render.depth.get(px, py) as f64 + tol).then_some(q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrEntry {
    pub id: u64,
    /// Projection in the reference frame (absent when behind that camera).
    pub p_ref: Option<Vector2<f64>>,
    pub q: Vector2<f64>,
    /// Visible in the reference frame; implies `p_ref` is present.
    pub visible_ref: bool,
}

/// Pixel correspondences of particles visible in `frame` with their locations
/// in `reference` (frame 1 for warp targets, frame t+1 for flow).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub frame: usize,
    pub reference: usize,
    pub entries: Vec<CorrEntry>,
}

impl CorrespondenceSet {
    pub fn visible_count(&self) -> usize {
        self.entries.iter().filter(|e| e.visible_ref).count()
    }
}

pub fn compute_correspondences(
    traj: &SimTrajectory,
    t: usize,
    reference: usize,
    camera_t: &CameraFrame,
    camera_ref: &CameraFrame,
    render_t: &RenderedFrame,
    render_ref: &RenderedFrame,
) -> CorrespondenceSet {
    let xs_t = &traj.frames[t].x;
    let xs_r = &traj.frames[reference].x;
    let entries = (0..traj.num_particles())
        .into_par_iter()
        .filter_map(|i| {
            let q = visible_projection(&xs_t[i], traj.object_ids[i], camera_t, render_t)?;
            let p_ref = camera_ref.project(&xs_r[i]).map(|(p, _)| p);
            let visible_ref = visible_projection(&xs_r[i], traj.object_ids[i], camera_ref, render_ref).is_some();
            Some(CorrEntry {
                id: traj.ids[i],
                p_ref,
                q,
                visible_ref,
            })
        })
        .collect();
    CorrespondenceSet {
        frame: t,
        reference,
        entries,
    }
}

const CORR_RECORD: usize = 25;

/// Packed records `id u64 | p_ref.x f32 | p_ref.y f32 | q.x f32 | q.y f32 | visible u8`,
/// little-endian, no header; an absent `p_ref` is written as NaN.
pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    let mut buf = Vec::with_capacity(set.entries.len() * CORR_RECORD);
    for e in &set.entries {
        buf.extend_from_slice(&e.id.to_le_bytes());
        let p = e.p_ref.unwrap_or(Vector2::repeat(f64::NAN));
        for v in [p.x, p.y, e.q.x, e.q.y] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.push(e.visible_ref as u8);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_correspondences(path: &Path, frame: usize, reference: usize) -> Result<CorrespondenceSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % CORR_RECORD != 0 {
        return Err(Error::Format(format!("{}: truncated correspondence file", path.display())));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let entries = bytes
        .chunks_exact(CORR_RECORD)
        .enumerate()
        .map(|(k, _)| {
            let o = k * CORR_RECORD;
            let p = Vector2::new(f(o + 8), f(o + 12));
            CorrEntry {
                id: u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()),
                p_ref: p.iter().all(|c| c.is_finite()).then_some(p),
                q: Vector2::new(f(o + 16), f(o + 20)),
                visible_ref: bytes[o + 24] != 0,
            }
        })
        .collect();
    Ok(CorrespondenceSet {
        frame,
        reference,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Intrinsics;
    use nalgebra::Matrix3;

    fn camera() -> CameraFrame {
        CameraFrame::new(
            Intrinsics {
                fx: 50.0,
                fy: 50.0,
                cx: 16.0,
                cy: 12.0,
            },
            Matrix3::identity(),
            Vector3::zeros(),
            32,
            24,
            0,
        )
    }

    #[test]
    fn single_particle_on_axis() {
        let r = render_points(&[Vector3::new(0.0, 0.0, 1.0)], &[[1.0, 0.0, 0.0]], &[3], &[9], &camera(), 1.0, 0);
        assert_eq!(*r.mask.get(16, 12), 3);
        assert_eq!(*r.depth.get(16, 12), 1.0);
        assert_eq!(r.mask.data.iter().filter(|&&m| m != 0).count(), 5);
        assert_eq!(*r.mask.get(0, 0), 0);
        assert_eq!(*r.depth.get(0, 0), f32::INFINITY);
        assert_eq!(*r.rgb.get(0, 0), [0.0; 3]);
    }

    #[test]
    fn nearer_particle_wins() {
        let pts = [Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0)];
        let r = render_points(&pts, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[1, 2], &[0, 1], &camera(), 1.0, 0);
        assert_eq!(*r.mask.get(16, 12), 2);
        assert_eq!(*r.rgb.get(16, 12), [0.0, 1.0, 0.0]);
        let same = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1.0)];
        let r = render_points(&same, &[[1.0; 3], [0.0; 3]], &[1, 2], &[5, 4], &camera(), 1.0, 0);
        assert_eq!(*r.mask.get(16, 12), 2, "tie goes to the lower ID");
    }

    #[test]
    fn behind_camera_renders_nothing() {
        let r = render_points(&[Vector3::new(0.0, 0.0, -1.0)], &[[1.0; 3]], &[1], &[0], &camera(), 2.0, 0);
        assert!(r.mask.data.iter().all(|&m| m == 0));
    }

    #[test]
    fn corr_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let set = CorrespondenceSet {
            frame: 3,
            reference: 0,
            entries: vec![
                CorrEntry {
                    id: 1 << 33,
                    p_ref: Some(Vector2::new(1.5, 2.25)),
                    q: Vector2::new(3.0, 4.0),
                    visible_ref: true,
                },
                CorrEntry {
                    id: 7,
                    p_ref: None,
                    q: Vector2::new(0.5, 0.0),
                    visible_ref: false,
                },
            ],
        };
        write_correspondences(&path, &set).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 50);
        assert_eq!(read_correspondences(&path, 3, 0).unwrap(), set);
    }
}
