use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::SceneBundle;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, PointGrid};
use crate::ply::PlyData;

/// Static background geometry aggregated over all frames (world frame, meters).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackgroundPointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub frames: Vec<u32>,
}

impl BackgroundPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.points)
    }

    pub fn to_ply(&self) -> PlyData {
        PlyData {
            positions: self.points.clone(),
            colors: self.colors.clone(),
            frames: Some(self.frames.clone()),
            faces: Vec::new(),
        }
    }

    pub fn from_ply(ply: PlyData) -> Self {
        let n = ply.positions.len();
        BackgroundPointCloud {
            points: ply.positions,
            colors: ply.colors,
            frames: ply.frames.unwrap_or_else(|| vec![0; n]),
        }
    }
}

/// Back-projects every valid background pixel (mask label 0) of every frame to world space.
pub fn build_background_points(bundle: &SceneBundle) -> Result<BackgroundPointCloud> {
    let per_frame: Vec<BackgroundPointCloud> = (0..bundle.num_frames())
        .into_par_iter()
        .map(|i| {
            let (depth, mask, cam, rgb) = (
                &bundle.depths[i],
                &bundle.masks[i],
                &bundle.cameras[i],
                &bundle.frames[i],
            );
            let mut out = BackgroundPointCloud::default();
            for y in 0..depth.height() {
                for x in 0..depth.width() {
                    if mask.label(x, y) != 0 {
                        continue;
                    }
                    if let Some(d) = depth.depth(x, y) {
                        out.points.push(cam.back_project(x as f64, y as f64, d));
                        out.colors.push(*rgb.get(x, y));
                        out.frames.push(i as u32);
                    }
                }
            }
            out
        })
        .collect();
    let mut cloud = BackgroundPointCloud::default();
    for part in per_frame {
        cloud.points.extend(part.points);
        cloud.colors.extend(part.colors);
        cloud.frames.extend(part.frames);
    }
    if cloud.is_empty() {
        return Err(Error::EmptyBackground);
    }
    Ok(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub voxel_size: f64,
    pub min_neighbors: usize,
    pub radius: f64,
}

impl FilterParams {
    /// Defaults scaled to a scene extent: voxel = extent / 128, radius = 3 voxels, 4 neighbors.
    pub fn for_extent(extent: f64) -> Self {
        let voxel_size = extent / 128.0;
        FilterParams {
            voxel_size,
            min_neighbors: 4,
            radius: 3.0 * voxel_size,
        }
    }
}

/// Voxel-grid subsampling (one centroid per occupied voxel) followed by radius
/// outlier removal. Output order follows first occupancy in the input.
pub fn filter_background_points(
    cloud: &BackgroundPointCloud,
    params: &FilterParams,
) -> BackgroundPointCloud {
    assert!(params.voxel_size > 0.0, "voxel size must be positive");
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut acc: Vec<(Vector3<f64>, [f64; 3], u32, usize)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            continue;
        }
        let key = [
            (p.x / params.voxel_size).floor() as i64,
            (p.y / params.voxel_size).floor() as i64,
            (p.z / params.voxel_size).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            acc.push((Vector3::zeros(), [0.0; 3], cloud.frames[i], 0));
            acc.len() - 1
        });
        let a = &mut acc[slot];
        a.0 += p;
        for c in 0..3 {
            a.1[c] += cloud.colors[i][c];
        }
        a.2 = a.2.min(cloud.frames[i]);
        a.3 += 1;
    }
    let points: Vec<Vector3<f64>> = acc.iter().map(|a| a.0 / a.3 as f64).collect();
    let grid = PointGrid::new(&points, params.radius.max(params.voxel_size));
    let keep: Vec<bool> = (0..points.len())
        .into_par_iter()
        .map(|i| grid.count_within(&points[i], params.radius, Some(i)) >= params.min_neighbors)
        .collect();
    let mut out = BackgroundPointCloud::default();
    for (i, a) in acc.iter().enumerate() {
        if keep[i] {
            out.points.push(points[i]);
            out.colors.push(a.1.map(|c| c / a.3 as f64));
            out.frames.push(a.2);
        }
    }
    if out.is_empty() && !cloud.is_empty() {
        log::warn!("background filtering removed every point");
    }
    out
}
