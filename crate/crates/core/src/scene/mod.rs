//! Perception artifacts for one template video: frames, depth, masks, cameras,
//! object meshes, feature matches and material descriptors.
//!
//! Frame numbers in files are 1-based (`frames/0001.png` is frame 1); all
//! in-memory indices are 0-based.

mod background;
mod io;

pub use background::{
    build_background_points, filter_background_points, BackgroundPointCloud, FilterParams,
};
pub use io::{load_bundle, write_bundle, BundleMeta};

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::MaterialDescriptor;
use crate::raster::{Raster, RgbRaster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera with a world-to-camera rigid transform `x_cam = R x_world + t`.
///
/// Camera axes: +x right, +y down, +z forward. Pixel centers sit on integer
/// coordinates, so `(u, v) = (fx x/z + cx, fy y/z + cy)` addresses pixel
/// `(round(u), round(v))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub frame: usize,
}

impl CameraFrame {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
        frame: usize,
    ) -> Self {
        CameraFrame {
            intrinsics,
            rotation,
            translation,
            width,
            height,
            frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        let ctx = |m: &str| Error::validation(format!("camera for frame {}: {m}", self.frame + 1));
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(ctx("focal lengths must be positive"));
        }
        if !(k.cx >= 0.0 && k.cx < self.width as f64 && k.cy >= 0.0 && k.cy < self.height as f64)
        {
            return Err(ctx("principal point outside image"));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) || !((r.determinant() - 1.0).abs() <= 1e-6) {
            return Err(ctx("rotation is not a proper orthonormal matrix"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(ctx("non-finite translation"));
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x - self.translation)
    }

    /// Projects a world point; returns the image coordinate and camera-space depth,
    /// or `None` for points at or behind the camera plane.
    #[inline]
    pub fn project(&self, x: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let c = self.world_to_camera(x);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((
            Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy),
            c.z,
        ))
    }

    /// World point at camera-space depth `depth` along the ray through `(u, v)`.
    #[inline]
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let c = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
        self.camera_to_world(&c)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// The camera +z (viewing) axis expressed in world coordinates.
    pub fn view_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn in_bounds(&self, p: &Vector2<f64>) -> bool {
        let (x, y) = (p.x.round(), p.y.round());
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Per-pixel metric depth. Invalid pixels are non-finite or `<= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub raster: Raster<f32>,
}

impl DepthMap {
    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    #[inline]
    pub fn depth(&self, x: usize, y: usize) -> Option<f64> {
        let d = *self.raster.get(x, y);
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }
}

/// Per-pixel object labels; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub labels: Raster<u8>,
    pub frame: usize,
}

impl ObjectMask {
    pub fn label(&self, x: usize, y: usize) -> u8 {
        *self.labels.get(x, y)
    }

    pub fn pixel_count(&self, object_id: u32) -> usize {
        self.labels
            .data
            .iter()
            .filter(|&&l| l as u32 == object_id)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMesh {
    pub object_id: u32,
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl ObjectMesh {
    pub fn validate(&self) -> Result<()> {
        let ctx = |m: String| Error::validation(format!("mesh of object {}: {m}", self.object_id));
        if self.vertices.is_empty() || self.triangles.is_empty() {
            return Err(ctx("mesh is empty".into()));
        }
        if self.colors.len() != self.vertices.len() {
            return Err(ctx("color count differs from vertex count".into()));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(ctx(format!("vertex {i} is not finite")));
        }
        if let Some(i) = self
            .colors
            .iter()
            .position(|c| !c.iter().all(|v| (0.0..=1.0).contains(v)))
        {
            return Err(ctx(format!("color of vertex {i} outside [0,1]")));
        }
        let n = self.vertices.len() as u32;
        if let Some(i) = self.triangles.iter().position(|t| t.iter().any(|&k| k >= n)) {
            return Err(ctx(format!("triangle {i} indexes past {n} vertices")));
        }
        Ok(())
    }
}

/// Matched pixel pairs for one object between two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatchSet {
    pub object_id: u32,
    pub frame_a: usize,
    pub frame_b: usize,
    /// `(xa, ya, xb, yb)` in pixels.
    pub matches: Vec<[f64; 4]>,
    pub dt: f64,
}

impl FeatureMatchSet {
    pub fn points_a(&self) -> impl Iterator<Item = Vector2<f64>> + '_ {
        self.matches.iter().map(|m| Vector2::new(m[0], m[1]))
    }

    pub fn points_b(&self) -> impl Iterator<Item = Vector2<f64>> + '_ {
        self.matches.iter().map(|m| Vector2::new(m[2], m[3]))
    }
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub meta: BundleMeta,
    pub frames: Vec<RgbRaster>,
    pub depths: Vec<DepthMap>,
    pub masks: Vec<ObjectMask>,
    pub cameras: Vec<CameraFrame>,
    pub meshes: BTreeMap<u32, ObjectMesh>,
    pub matches: BTreeMap<u32, Vec<FeatureMatchSet>>,
    pub materials: BTreeMap<u32, MaterialDescriptor>,
}

impl SceneBundle {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn fps(&self) -> f64 {
        self.meta.fps
    }

    pub fn object_ids(&self) -> &[u32] {
        &self.meta.object_ids
    }

    /// Match set for an object and frame pair, if present.
    pub fn match_set(&self, object_id: u32, a: usize, b: usize) -> Option<&FeatureMatchSet> {
        self.matches
            .get(&object_id)?
            .iter()
            .find(|m| m.frame_a == a && m.frame_b == b)
    }

    /// Checks every cross-file consistency invariant.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if !(m.fps > 0.0 && m.fps.is_finite()) {
            return Err(Error::validation("fps must be positive"));
        }
        let t = m.num_frames;
        if t == 0 {
            return Err(Error::validation("bundle has no frames"));
        }
        for (what, len) in [
            ("frames", self.frames.len()),
            ("depth maps", self.depths.len()),
            ("masks", self.masks.len()),
            ("cameras", self.cameras.len()),
        ] {
            if len != t {
                return Err(Error::validation(format!(
                    "{what}: {len} entries but num_frames = {t}"
                )));
            }
        }
        let (w, h) = (m.width, m.height);
        for i in 0..t {
            let ctx = |what: &str, ww: usize, hh: usize| {
                Error::validation(format!(
                    "frame {}: {what} resolution {ww}x{hh} differs from {w}x{h}",
                    i + 1
                ))
            };
            let f = &self.frames[i];
            if (f.width, f.height) != (w, h) {
                return Err(ctx("rgb", f.width, f.height));
            }
            let d = &self.depths[i];
            if (d.width(), d.height()) != (w, h) {
                return Err(ctx("depth", d.width(), d.height()));
            }
            let mk = &self.masks[i];
            if (mk.labels.width, mk.labels.height) != (w, h) {
                return Err(ctx("mask", mk.labels.width, mk.labels.height));
            }
            let c = &self.cameras[i];
            if (c.width, c.height) != (w, h) {
                return Err(ctx("camera", c.width, c.height));
            }
            if c.frame != i {
                return Err(Error::validation(format!(
                    "camera entry {} is for frame {}",
                    i + 1,
                    c.frame + 1
                )));
            }
            c.validate()?;
            if let Some(&bad) = mk
                .labels
                .data
                .iter()
                .find(|&&l| l != 0 && !m.object_ids.contains(&(l as u32)))
            {
                return Err(Error::validation(format!(
                    "frame {}: mask label {bad} is not a declared object id",
                    i + 1
                )));
            }
        }
        for (k, &id) in m.object_ids.iter().enumerate() {
            if id != k as u32 + 1 {
                return Err(Error::validation(format!(
                    "object ids must be dense 1..N, got {:?}",
                    m.object_ids
                )));
            }
            let mesh = self.meshes.get(&id).ok_or_else(|| {
                Error::validation(format!("object {id}: no mesh"))
            })?;
            mesh.validate()?;
            if !self.materials.contains_key(&id) {
                return Err(Error::validation(format!("object {id}: no material descriptor")));
            }
            for ms in self.matches.get(&id).map(Vec::as_slice).unwrap_or_default() {
                if !(ms.dt > 0.0) {
                    return Err(Error::validation(format!(
                        "object {id}: match set ({}, {}) has dt <= 0",
                        ms.frame_a + 1,
                        ms.frame_b + 1
                    )));
                }
                if ms.frame_a >= t || ms.frame_b >= t {
                    return Err(Error::validation(format!(
                        "object {id}: match set references missing frame"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_camera() -> CameraFrame {
        CameraFrame::new(
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 32.0,
                cy: 24.0,
            },
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            48,
            0,
        )
    }

    #[test]
    fn principal_point_back_projects_on_axis() {
        let cam = identity_camera();
        let p = cam.back_project(32.0, 24.0, 1.0);
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 1.0));
        let q = cam.back_project(32.0 + 100.0, 24.0, 2.0);
        assert_relative_eq!(q, Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut cam = identity_camera();
        cam.rotation = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(cam.validate().is_err());
        let mut cam = identity_camera();
        cam.intrinsics.cx = 64.0;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn view_axis_follows_rotation() {
        let mut cam = identity_camera();
        // 90 degrees about y: camera z looks along world +x? R maps world->camera.
        cam.rotation = *nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), 0.5 * std::f64::consts::PI).matrix();
        let axis = cam.view_axis();
        assert_relative_eq!(cam.rotation * axis, Vector3::z(), epsilon = 1e-12);
    }
}
