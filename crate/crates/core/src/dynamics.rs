//! Initial object state: placement, linear velocity from centroid displacement,
//! in-plane angular velocity from 2D feature matches, and per-point velocities.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bounding_sphere;
use crate::scene::{CameraFrame, FeatureMatchSet, SceneBundle};

/// Fewer valid back-projected pixels than this cannot support a placement.
pub const MIN_PLACEMENT_PIXELS: usize = 16;
/// Minimum fraction of masked pixels that must carry valid depth.
pub const MIN_VALID_DEPTH_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInitState {
    pub object_id: u32,
    /// World position of the object center (m).
    pub position: Vector3<f64>,
    /// Meters per mesh unit.
    pub scale: f64,
    pub orientation: Matrix3<f64>,
    pub velocity: Vector3<f64>,
    /// World-frame angular velocity (rad/s).
    pub angular_velocity: Vector3<f64>,
    pub rotation_center: Vector3<f64>,
    /// World point onto which the mesh's bounding-sphere center is placed.
    pub anchor: Vector3<f64>,
}

impl ObjectInitState {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vector3<f64>| v.iter().all(|c| c.is_finite());
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::validation(format!(
                "object {}: scale must be positive",
                self.object_id
            )));
        }
        if !(finite(&self.position)
            && finite(&self.velocity)
            && finite(&self.angular_velocity)
            && finite(&self.rotation_center)
            && finite(&self.anchor)
            && self.orientation.iter().all(|c| c.is_finite()))
        {
            return Err(Error::validation(format!(
                "object {}: non-finite initial state",
                self.object_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub position: Vector3<f64>,
    pub scale: f64,
    pub orientation: Matrix3<f64>,
    /// Center of the mesh's bounding sphere in mesh units; maps onto `anchor`.
    pub mesh_center: Vector3<f64>,
    /// Bounding-sphere center of the back-projected pixels (m). Unlike the
    /// centroid it is not biased toward the camera by self-occlusion.
    pub anchor: Vector3<f64>,
    /// Bounding radius of the placed mesh (m).
    pub radius: f64,
}

/// World-space points of the masked pixels with valid depth in one frame.
pub fn masked_points(bundle: &SceneBundle, object_id: u32, frame: usize) -> Result<Vec<Vector3<f64>>> {
    let fail = |reason: String| Error::PlacementFailure {
        object_id,
        frame,
        reason,
    };
    let mask = bundle
        .masks
        .get(frame)
        .ok_or_else(|| fail("frame does not exist".into()))?;
    let depth = &bundle.depths[frame];
    let cam = &bundle.cameras[frame];
    let mut masked = 0usize;
    let mut points = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if mask.label(x, y) as u32 != object_id {
                continue;
            }
            masked += 1;
            if let Some(d) = depth.depth(x, y) {
                points.push(cam.back_project(x as f64, y as f64, d));
            }
        }
    }
    if masked == 0 {
        return Err(fail("object mask is empty".into()));
    }
    if (points.len() as f64) < MIN_VALID_DEPTH_FRACTION * masked as f64 {
        return Err(fail(format!(
            "only {} of {masked} masked pixels have valid depth",
            points.len()
        )));
    }
    if points.len() < MIN_PLACEMENT_PIXELS {
        return Err(fail(format!(
            "{} valid pixels, below the floor of {MIN_PLACEMENT_PIXELS}",
            points.len()
        )));
    }
    Ok(points)
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64
}

/// World centroid of the object's masked depth pixels in `frame`.
pub fn masked_centroid(bundle: &SceneBundle, object_id: u32, frame: usize) -> Result<Vector3<f64>> {
    Ok(centroid(&masked_points(bundle, object_id, frame)?))
}

/// Places an object from its frame-`frame` mask and depth. The mesh is scaled so
/// its bounding-sphere diameter matches that of the back-projected pixels;
/// orientation is identity.
pub fn place_object(bundle: &SceneBundle, object_id: u32, frame: usize, seed: u64) -> Result<Placement> {
    let points = masked_points(bundle, object_id, frame)?;
    let mesh = bundle.meshes.get(&object_id).ok_or_else(|| Error::PlacementFailure {
        object_id,
        frame,
        reason: "no mesh".into(),
    })?;
    let observed = bounding_sphere(&points, seed).expect("non-empty");
    let model = bounding_sphere(&mesh.vertices, seed).expect("validated mesh is non-empty");
    if !(model.radius > 0.0) || !(observed.radius > 0.0) {
        return Err(Error::PlacementFailure {
            object_id,
            frame,
            reason: "degenerate extent".into(),
        });
    }
    let scale = observed.radius / model.radius;
    Ok(Placement {
        position: centroid(&points),
        scale,
        orientation: Matrix3::identity(),
        mesh_center: model.center,
        anchor: observed.center,
        radius: model.radius * scale,
    })
}

/// Real-time interval between two frames: the match set's `dt` when one exists
/// for the pair, otherwise the frame-rate spacing.
pub fn frame_interval(bundle: &SceneBundle, object_id: u32, a: usize, b: usize) -> f64 {
    if let Some(m) = bundle.match_set(object_id, a, b) {
        return m.dt;
    }
    if let Some(m) = bundle.match_set(object_id, b, a) {
        return -m.dt;
    }
    (b as f64 - a as f64) / bundle.fps()
}

/// `v = (centroid(b) - centroid(a)) / dt`.
pub fn estimate_linear_velocity(
    bundle: &SceneBundle,
    object_id: u32,
    frame_a: usize,
    frame_b: usize,
) -> Result<Vector3<f64>> {
    let dt = frame_interval(bundle, object_id, frame_a, frame_b);
    if dt == 0.0 || !dt.is_finite() {
        return Err(Error::validation(format!(
            "object {object_id}: zero interval between frames {} and {}",
            frame_a + 1,
            frame_b + 1
        )));
    }
    let ca = masked_centroid(bundle, object_id, frame_a)?;
    let cb = masked_centroid(bundle, object_id, frame_b)?;
    Ok((cb - ca) / dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Image-plane angle (rad), positive from +u toward +v.
    pub theta: f64,
    /// Mean of frame-a points (px).
    pub centroid: Vector2<f64>,
    pub residual_rms: f64,
    /// Least-squares similarity scale of the centered sets (approach/recede cue).
    pub scale_ratio: f64,
}

/// Least-squares 2D rotation between centered match sets (orthogonal Procrustes).
pub fn estimate_rotation(matches: &FeatureMatchSet) -> Result<RotationEstimate> {
    let n = matches.matches.len();
    if n < 3 {
        return Err(Error::InsufficientMatches { found: n });
    }
    let ca = matches.points_a().sum::<Vector2<f64>>() / n as f64;
    let cb = matches.points_b().sum::<Vector2<f64>>() / n as f64;
    let (mut dot, mut cross, mut norm_a, mut norm_b) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in matches.points_a().zip(matches.points_b()) {
        let (a, b) = (a - ca, b - cb);
        dot += a.dot(&b);
        cross += a.x * b.y - a.y * b.x;
        norm_a += a.norm_squared();
        norm_b += b.norm_squared();
    }
    let tiny = 1e-18 * (1.0 + ca.norm_squared() + cb.norm_squared()) * n as f64;
    if norm_a <= tiny || norm_b <= tiny {
        return Err(Error::DegenerateMatches);
    }
    let theta = cross.atan2(dot);
    let (s, c) = theta.sin_cos();
    let mut sq = 0.0;
    for (a, b) in matches.points_a().zip(matches.points_b()) {
        let (a, b) = (a - ca, b - cb);
        let ra = Vector2::new(c * a.x - s * a.y, s * a.x + c * a.y);
        sq += (ra - b).norm_squared();
    }
    Ok(RotationEstimate {
        theta,
        centroid: ca,
        residual_rms: (sq / n as f64).sqrt(),
        scale_ratio: (dot * dot + cross * cross).sqrt() / norm_a,
    })
}

/// In-plane rotation mapped to a world angular velocity about the camera viewing axis.
pub fn rotation_to_angular_velocity(theta: f64, dt: f64, camera: &CameraFrame) -> Vector3<f64> {
    assert!(dt > 0.0, "dt must be positive");
    camera.view_axis() * (theta / dt)
}

/// `v(x) = v + omega x (x - c)` for every point.
pub fn per_point_velocity(state: &ObjectInitState, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|x| state.velocity + state.angular_velocity.cross(&(x - state.rotation_center)))
        .collect()
}

/// Default key-frame pair: frame 0 and `round(fps * dt)` frames later, clamped to the video.
pub fn key_frames(fps: f64, num_frames: usize, dt_default: f64) -> (usize, usize) {
    let step = ((fps * dt_default).round() as usize).max(1);
    (0, step.min(num_frames.saturating_sub(1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub object_id: u32,
    pub frame_a: usize,
    pub frame_b: usize,
    pub theta_deg: f64,
    pub residual_px: f64,
    pub scale_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateParams {
    pub dt_default: f64,
    /// Overrides the key-frame pair.
    pub key_frames: Option<(usize, usize)>,
    /// Report the similarity scale of the match sets (does not alter velocities).
    pub estimate_scaling: bool,
    pub seed: u64,
}

impl Default for EstimateParams {
    fn default() -> Self {
        EstimateParams {
            dt_default: 0.2,
            key_frames: None,
            estimate_scaling: false,
            seed: 0,
        }
    }
}

/// Full initial-state estimate for one object.
pub fn estimate_object(
    bundle: &SceneBundle,
    object_id: u32,
    params: &EstimateParams,
) -> Result<(ObjectInitState, Placement, EstimateReport)> {
    let (a, b) = params
        .key_frames
        .unwrap_or_else(|| key_frames(bundle.fps(), bundle.num_frames(), params.dt_default));
    let placement = place_object(bundle, object_id, a, params.seed)?;
    let mut warnings = Vec::new();
    let velocity = if a == b {
        warnings.push("single-frame video: linear velocity set to zero".to_string());
        Vector3::zeros()
    } else {
        estimate_linear_velocity(bundle, object_id, a, b)?
    };

    let matches = bundle
        .match_set(object_id, a, b)
        .or_else(|| bundle.matches.get(&object_id).and_then(|v| v.first()));
    let mut report = EstimateReport {
        object_id,
        frame_a: a,
        frame_b: b,
        theta_deg: 0.0,
        residual_px: 0.0,
        scale_ratio: None,
        warnings: Vec::new(),
    };
    let angular_velocity = match matches.map(|m| (m, estimate_rotation(m))) {
        Some((m, Ok(rot))) => {
            report.theta_deg = rot.theta.to_degrees();
            report.residual_px = rot.residual_rms;
            if params.estimate_scaling {
                report.scale_ratio = Some(rot.scale_ratio);
            }
            rotation_to_angular_velocity(rot.theta, m.dt, &bundle.cameras[m.frame_a])
        }
        Some((_, Err(e))) => {
            warnings.push(format!("rotation not estimated: {e}"));
            Vector3::zeros()
        }
        None => {
            warnings.push("no feature matches: rotation not estimated".to_string());
            Vector3::zeros()
        }
    };
    report.warnings = warnings;
    let state = ObjectInitState {
        object_id,
        position: placement.position,
        scale: placement.scale,
        orientation: placement.orientation,
        velocity,
        angular_velocity,
        rotation_center: placement.anchor,
        anchor: placement.anchor,
    };
    state.validate()?;
    Ok((state, placement, report))
}
