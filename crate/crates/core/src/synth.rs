//! Synthetic scenes with known ground truth: primitive meshes, rigid initial
//! states, and a ray-cast falling-ball bundle with analytic template flow.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};

use crate::dynamics::ObjectInitState;
use crate::error::Result;
use crate::material::{Bounce, Composition, MaterialDescriptor, Roughness};
use crate::raster::Raster;
use crate::render::{write_flo, FlowField};
use crate::scene::{
    BundleMeta, CameraFrame, DepthMap, FeatureMatchSet, Intrinsics, ObjectMask, ObjectMesh, SceneBundle,
};

/// Axis-aligned cube of side `side` centered at the origin, outward-facing triangles.
pub fn cube_mesh(object_id: u32, side: f64, color: [f64; 3]) -> ObjectMesh {
    let h = side / 2.0;
    let vertices: Vec<Vector3<f64>> = (0..8)
        .map(|i| Vector3::new(if i & 1 == 0 { -h } else { h }, if i & 2 == 0 { -h } else { h }, if i & 4 == 0 { -h } else { h }))
        .collect();
    let quads = [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    ObjectMesh {
        object_id,
        colors: vec![color; 8],
        vertices,
        triangles,
    }
}

/// Subdivided icosahedron of radius `radius` centered at the origin; vertex
/// colors are `color(unit direction)`.
pub fn icosphere(object_id: u32, subdivisions: u32, radius: f64, color: impl Fn(&Vector3<f64>) -> [f64; 3]) -> ObjectMesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let mut dirs: Vec<Vector3<f64>> = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, dirs: &mut Vec<Vector3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                dirs.push((dirs[a as usize] + dirs[b as usize]).normalize());
                dirs.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut dirs);
            let bc = midpoint(b, c, &mut dirs);
            let ca = midpoint(c, a, &mut dirs);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    for t in &mut tris {
        let [a, b, c] = t.map(|i| dirs[i as usize]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            t.swap(1, 2);
        }
    }
    ObjectMesh {
        object_id,
        colors: dirs.iter().map(&color).collect(),
        vertices: dirs.iter().map(|d| d * radius).collect(),
        triangles: tris,
    }
}

/// Rigid initial state placing a mesh's bounding-sphere center at `anchor`.
pub fn rigid_state(
    object_id: u32,
    anchor: Vector3<f64>,
    scale: f64,
    velocity: Vector3<f64>,
    angular_velocity: Vector3<f64>,
) -> ObjectInitState {
    ObjectInitState {
        object_id,
        position: anchor,
        scale,
        orientation: Matrix3::identity(),
        velocity,
        angular_velocity,
        rotation_center: anchor,
        anchor,
    }
}

/// Height and vertical velocity of a point mass dropped onto a floor at
/// `floor`, with each impact reversing and scaling the vertical velocity by
/// `restitution`.
pub fn bounce_height(y0: f64, vy0: f64, g: f64, restitution: f64, floor: f64, t: f64) -> (f64, f64) {
    let (mut y, mut vy, mut t) = (y0, vy0, t);
    for _ in 0..1000 {
        let t_hit = (vy + (vy * vy + 2.0 * g * (y - floor)).max(0.0).sqrt()) / g;
        if t < t_hit {
            return (y + vy * t - 0.5 * g * t * t, vy - g * t);
        }
        t -= t_hit;
        y = floor;
        vy = -restitution * (vy - g * t_hit);
        if vy < 1e-9 {
            return (floor, 0.0);
        }
    }
    (floor, 0.0)
}

/// A ball of radius `radius` thrown sideways above a floor (y = 0) in front of
/// a back wall, seen by a static camera. Depth is left invalid (0) where rays
/// miss the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FallingBall {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub focal: f64,
    pub radius: f64,
    pub start: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Spin about world z (rad/s).
    pub spin: f64,
    pub restitution: f64,
    pub gravity: f64,
    pub wall_z: f64,
    pub wall_height: f64,
    pub camera_center: Vector3<f64>,
    pub material: MaterialDescriptor,
    /// Frame pair of the feature matches.
    pub match_frames: (usize, usize),
    pub num_matches: usize,
}

impl Default for FallingBall {
    fn default() -> Self {
        FallingBall {
            width: 64,
            height: 64,
            frames: 25,
            fps: 24.0,
            focal: 120.0,
            radius: 0.15,
            start: Vector3::new(0.0, 0.8, 0.0),
            velocity: Vector3::new(0.3, 0.0, 0.0),
            spin: -2.0,
            restitution: 0.8,
            gravity: 9.8,
            wall_z: -1.5,
            wall_height: 1.4,
            camera_center: Vector3::new(0.0, 0.5, 2.5),
            material: MaterialDescriptor::new(Composition::Rubber, Bounce::High, Roughness::Smooth),
            match_frames: (0, 5),
            num_matches: 60,
        }
    }
}

pub const BALL_ID: u32 = 1;

enum Hit {
    Ball(Vector3<f64>),
    Floor(Vector3<f64>),
    Wall(Vector3<f64>),
}

impl FallingBall {
    pub fn camera(&self, frame: usize) -> CameraFrame {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        CameraFrame::new(
            Intrinsics {
                fx: self.focal,
                fy: self.focal,
                cx: (self.width as f64 - 1.0) / 2.0,
                cy: (self.height as f64 - 1.0) / 2.0,
            },
            r,
            -(r * self.camera_center),
            self.width,
            self.height,
            frame,
        )
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    /// Ball center and body-to-world rotation at time `t`.
    pub fn pose(&self, t: f64) -> (Vector3<f64>, Rotation3<f64>) {
        let (y, _) = bounce_height(self.start.y, self.velocity.y, self.gravity, self.restitution, self.radius, t);
        let c = Vector3::new(self.start.x + self.velocity.x * t, y, self.start.z + self.velocity.z * t);
        (c, Rotation3::from_axis_angle(&Vector3::z_axis(), self.spin * t))
    }

    fn ball_color(&self, body_dir: &Vector3<f64>) -> [f64; 3] {
        let d = body_dir.normalize();
        [0.5 + 0.45 * d.x, 0.5 + 0.45 * d.y, 0.5 + 0.45 * d.z]
    }

    fn floor_color(p: &Vector3<f64>) -> [f64; 3] {
        let check = ((p.x / 0.25).floor() as i64 + (p.z / 0.25).floor() as i64).rem_euclid(2);
        if check == 0 {
            [0.35, 0.36, 0.32]
        } else {
            [0.62, 0.6, 0.55]
        }
    }

    fn wall_color(p: &Vector3<f64>) -> [f64; 3] {
        let s = 0.5 + 0.15 * (p.x * 3.0).sin() + 0.1 * (p.y / 1.4);
        [s * 0.9, s * 0.8, s * 0.7]
    }

    fn cast(&self, camera: &CameraFrame, u: f64, v: f64, t: f64) -> Option<Hit> {
        let o = camera.center();
        let d = camera.back_project(u, v, 1.0) - o;
        let (c, _) = self.pose(t);
        let mut best: Option<(f64, Hit)> = None;
        let mut consider = |s: f64, hit: Hit| {
            if s > 1e-9 && best.as_ref().is_none_or(|b| s < b.0) {
                best = Some((s, hit));
            }
        };
        let oc = o - c;
        let (a, b, cc) = (d.dot(&d), 2.0 * d.dot(&oc), oc.dot(&oc) - self.radius * self.radius);
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let s = (-b - disc.sqrt()) / (2.0 * a);
            consider(s, Hit::Ball(o + s * d));
        }
        if d.y < 0.0 {
            let s = -o.y / d.y;
            let p = o + s * d;
            if p.z > self.wall_z {
                consider(s, Hit::Floor(p));
            }
        }
        if d.z < 0.0 {
            let s = (self.wall_z - o.z) / d.z;
            let p = o + s * d;
            if (0.0..=self.wall_height).contains(&p.y) {
                consider(s, Hit::Wall(p));
            }
        }
        best.map(|b| b.1)
    }

    /// Ray-cast RGB, depth and mask of frame `frame`.
    pub fn render(&self, frame: usize) -> (Raster<[f64; 3]>, DepthMap, ObjectMask) {
        let cam = self.camera(frame);
        let t = self.time(frame);
        let (c, rot) = self.pose(t);
        let (w, h) = (self.width, self.height);
        let mut rgb = Raster::filled(w, h, [0.7, 0.8, 0.95]);
        let mut depth = Raster::filled(w, h, 0.0f32);
        let mut mask = Raster::filled(w, h, 0u8);
        for y in 0..h {
            for x in 0..w {
                let Some(hit) = self.cast(&cam, x as f64, y as f64, t) else {
                    continue;
                };
                let (p, color, label) = match hit {
                    Hit::Ball(p) => (p, self.ball_color(&(rot.inverse() * (p - c))), BALL_ID as u8),
                    Hit::Floor(p) => (p, Self::floor_color(&p), 0),
                    Hit::Wall(p) => (p, Self::wall_color(&p), 0),
                };
                *rgb.get_mut(x, y) = color;
                *depth.get_mut(x, y) = cam.world_to_camera(&p).z as f32;
                *mask.get_mut(x, y) = label;
            }
        }
        (rgb, DepthMap { raster: depth }, ObjectMask { labels: mask, frame })
    }

    /// Unit-radius-independent ball mesh with the body-frame coloring used by `render`.
    pub fn mesh(&self) -> ObjectMesh {
        icosphere(BALL_ID, 3, 0.5, |d| self.ball_color(d))
    }

    /// World position at frame `b` of the body point that is at `p` in frame `a`.
    pub fn carry(&self, p: &Vector3<f64>, a: usize, b: usize) -> Vector3<f64> {
        let (ca, ra) = self.pose(self.time(a));
        let (cb, rb) = self.pose(self.time(b));
        cb + rb * (ra.inverse() * (p - ca))
    }

    /// Matches between visible surface points of the ball in the two match frames.
    pub fn matches(&self) -> FeatureMatchSet {
        let (a, b) = self.match_frames;
        let (cam_a, cam_b) = (self.camera(a), self.camera(b));
        let (c, _) = self.pose(self.time(a));
        let eye = cam_a.center();
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let total = self.num_matches * 4;
        let mut matches = Vec::new();
        for i in 0..total {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / total as f64;
            let r = (1.0 - z * z).sqrt();
            let n = Vector3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
            let p = c + self.radius * n;
            if n.dot(&(eye - p).normalize()) < 0.2 {
                continue;
            }
            let (Some((qa, _)), Some((qb, _))) = (cam_a.project(&p), cam_b.project(&self.carry(&p, a, b))) else {
                continue;
            };
            if cam_a.in_bounds(&qa) && cam_b.in_bounds(&qb) {
                matches.push([qa.x, qa.y, qb.x, qb.y]);
            }
            if matches.len() == self.num_matches {
                break;
            }
        }
        FeatureMatchSet {
            object_id: BALL_ID,
            frame_a: a,
            frame_b: b,
            matches,
            dt: (b - a) as f64 / self.fps,
        }
    }

    pub fn bundle(&self) -> SceneBundle {
        let mut frames = Vec::new();
        let mut depths = Vec::new();
        let mut masks = Vec::new();
        for f in 0..self.frames {
            let (rgb, d, m) = self.render(f);
            frames.push(rgb);
            depths.push(d);
            masks.push(m);
        }
        SceneBundle {
            meta: BundleMeta {
                fps: self.fps,
                width: self.width,
                height: self.height,
                num_frames: self.frames,
                object_ids: vec![BALL_ID],
            },
            frames,
            depths,
            masks,
            cameras: (0..self.frames).map(|f| self.camera(f)).collect(),
            meshes: BTreeMap::from([(BALL_ID, self.mesh())]),
            matches: BTreeMap::from([(BALL_ID, vec![self.matches()])]),
            materials: BTreeMap::from([(BALL_ID, self.material)]),
        }
    }

    /// Template flow from frame `t` to `t + 1`: the true image motion of the
    /// surface seen at each pixel (zero on the static background).
    pub fn template_flow(&self, t: usize) -> FlowField {
        let cam = self.camera(t);
        let next = self.camera(t + 1);
        let mut out = FlowField::zeros(self.width, self.height, t, t + 1);
        for y in 0..self.height {
            for x in 0..self.width {
                let q = Vector2::new(x as f64, y as f64);
                let v = match self.cast(&cam, q.x, q.y, self.time(t)) {
                    Some(Hit::Ball(p)) => next.project(&self.carry(&p, t, t + 1)).map_or(Vector2::zeros(), |(p1, _)| p1 - q),
                    _ => Vector2::zeros(),
                };
                out.set(x, y, Some(v));
            }
        }
        out
    }

    /// Writes the bundle plus `flow/%04d.flo` template flows for frames `1..frames-1`.
    pub fn write(&self, root: &Path) -> Result<SceneBundle> {
        let bundle = self.bundle();
        crate::scene::write_bundle(&bundle, root)?;
        let dir = root.join("flow");
        std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
        for t in 0..self.frames.saturating_sub(1) {
            write_flo(&dir.join(format!("{:04}.flo", t + 1)), &self.template_flow(t))?;
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpm::winding_number as seed_winding;

    #[test]
    fn cube_is_closed_and_outward() {
        let m = cube_mesh(1, 2.0, [0.5; 3]);
        m.validate().unwrap();
        assert!((seed_winding(&m.vertices, &m.triangles, &Vector3::zeros()) - 1.0).abs() < 1e-9);
        assert!(seed_winding(&m.vertices, &m.triangles, &Vector3::new(1.5, 0.0, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = icosphere(2, 2, 0.5, |_| [0.2; 3]);
        m.validate().unwrap();
        assert_eq!(m.triangles.len(), 320);
        assert_eq!(m.vertices.len(), 162);
        assert!((seed_winding(&m.vertices, &m.triangles, &Vector3::new(0.1, 0.0, 0.0)) - 1.0).abs() < 1e-9);
        assert!(m.vertices.iter().all(|v| (v.norm() - 0.5).abs() < 1e-12));
    }

    #[test]
    fn bounce_matches_free_fall_then_restitution() {
        let (y, vy) = bounce_height(1.0, 0.0, 10.0, 0.5, 0.0, 0.3);
        assert!((y - (1.0 - 0.45)).abs() < 1e-12 && (vy + 3.0).abs() < 1e-12);
        let t_hit = (0.2f64).sqrt();
        let v_up = 0.5 * 10.0 * t_hit;
        let (y, _) = bounce_height(1.0, 0.0, 10.0, 0.5, 0.0, t_hit + v_up / 10.0);
        assert!((y - v_up * v_up / 20.0).abs() < 1e-9);
    }

    #[test]
    fn fixture_is_consistent() {
        let fx = FallingBall::default();
        let b = fx.bundle();
        b.validate().unwrap();
        assert!(b.masks.iter().all(|m| m.pixel_count(BALL_ID) > 100));
        assert!(b.depths[0].raster.data.contains(&0.0), "some rays miss the scene");
        let m = &b.matches[&BALL_ID][0];
        assert_eq!(m.matches.len(), fx.num_matches);
        // Ball pixels report the depth of the ball surface.
        let cam = fx.camera(0);
        let (c, _) = fx.pose(0.0);
        let (q, z) = cam.project(&c).unwrap();
        let (x, y) = (q.x.round() as usize, q.y.round() as usize);
        assert_eq!(b.masks[0].label(x, y), BALL_ID as u8);
        assert!((b.depths[0].depth(x, y).unwrap() - (z - fx.radius)).abs() < 0.02);
    }

    #[test]
    fn template_flow_moves_ball_pixels_only() {
        let fx = FallingBall::default();
        let f = fx.template_flow(3);
        let (_, _, mask) = fx.render(3);
        for y in 0..fx.height {
            for x in 0..fx.width {
                let v = f.get(x, y).unwrap();
                if mask.label(x, y) == 0 {
                    assert_eq!(v, Vector2::zeros());
                } else {
                    assert!(v.y > 0.0, "ball falls down the image");
                }
            }
        }
    }
}
