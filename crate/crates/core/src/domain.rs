//! Metric-to-simulation similarity transform and the `[0,2]^3` domain box.
//!
//! Time is kept in real seconds; lengths scale by `S`, so velocities and
//! accelerations scale by `S` and specific stiffness by `S^2`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::ObjectInitState;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::scene::CameraFrame;

pub const DOMAIN_SIZE: f64 = 2.0;
pub const DEFAULT_OFFSET: f64 = 1.25;
pub const DEFAULT_GRID: usize = 128;
pub const DEFAULT_CFL: f64 = 0.4;
/// Substep cap (s). Keeps the first-order gravity error of symplectic Euler
/// below 1% of the displacement from the first video frame on.
pub const DEFAULT_DT_CAP: f64 = 2e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDomain {
    /// Sim units per meter.
    #[serde(rename = "S")]
    pub scale: f64,
    /// World-to-sim rotation.
    #[serde(rename = "R")]
    pub rotation: Matrix3<f64>,
    #[serde(rename = "t")]
    pub translation: Vector3<f64>,
    #[serde(rename = "C")]
    pub offset: f64,
    pub n: usize,
    pub dx: f64,
    pub gravity_sim: Vector3<f64>,
    /// Upper bound on the simulation substep (s).
    pub dt: f64,
}

impl SimDomain {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::validation("domain scale must be positive"));
        }
        if self.offset < 1.0 {
            return Err(Error::validation(format!("offset coefficient C = {} must be >= 1", self.offset)));
        }
        if self.n < 8 {
            return Err(Error::validation(format!("grid resolution {} is below 8", self.n)));
        }
        if (self.dx - DOMAIN_SIZE / self.n as f64).abs() > 1e-12 {
            return Err(Error::validation("dx must equal 2/n"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("domain dt must be positive"));
        }
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::validation("domain rotation is not a proper rotation"));
        }
        Ok(())
    }

    pub fn to_sim(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }

    pub fn from_sim(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x - self.translation) / self.scale
    }

    pub fn vel_to_sim(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * v)
    }

    pub fn vel_from_sim(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * v / self.scale
    }

    /// Rotates a world-frame axial vector (angular velocity) into sim axes; rad/s is scale-free.
    pub fn omega_to_sim(&self, w: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * w
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        x.iter().all(|&c| (0.0..=DOMAIN_SIZE).contains(&c))
    }

    /// Conjugates a metric camera so that `project_sim(to_sim(p)) == project(p)`.
    /// Camera-space depth scales by `S`.
    pub fn camera_to_sim(&self, cam: &CameraFrame) -> CameraFrame {
        let r = cam.rotation * self.rotation.transpose();
        let t = self.scale * cam.translation - r * self.translation;
        CameraFrame { rotation: r, translation: t, ..cam.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d: SimDomain = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        d.validate()?;
        Ok(d)
    }
}

/// Interval of `p + v t + g t^2 / 2` over `t in [0, horizon]` along one axis.
fn ballistic_range(p: f64, v: f64, g: f64, horizon: f64) -> (f64, f64) {
    let at = |t: f64| p + v * t + 0.5 * g * t * t;
    let mut lo = at(0.0).min(at(horizon));
    let mut hi = at(0.0).max(at(horizon));
    if g != 0.0 {
        let t_star = -v / g;
        if t_star > 0.0 && t_star < horizon {
            lo = lo.min(at(t_star));
            hi = hi.max(at(t_star));
        }
    }
    (lo, hi)
}

/// Swept ballistic envelope of an object's center (collisions ignored), padded by its bounding radius.
pub fn bound_motion(state: &ObjectInitState, radius: f64, horizon: f64, gravity: &Vector3<f64>) -> Aabb {
    assert!(horizon > 0.0, "horizon must be positive");
    let mut min = Vector3::zeros();
    let mut max = Vector3::zeros();
    for k in 0..3 {
        let (lo, hi) = ballistic_range(state.anchor[k], state.velocity[k], gravity[k], horizon);
        min[k] = lo - radius;
        max[k] = hi + radius;
    }
    Aabb::new(min, max)
}

/// Stable substep bound `cfl * dx / (v_max + c_wave)`.
pub fn stable_dt(cfl: f64, dx: f64, v_max: f64, c_wave: f64) -> f64 {
    cfl * dx / (v_max + c_wave)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainParams {
    pub offset: f64,
    pub n: usize,
    pub gravity: Vector3<f64>,
    /// World-to-sim rotation (gravity alignment).
    pub rotation: Matrix3<f64>,
    pub dt: f64,
}

impl Default for DomainParams {
    fn default() -> Self {
        DomainParams {
            offset: DEFAULT_OFFSET,
            n: DEFAULT_GRID,
            gravity: Vector3::new(0.0, -9.8, 0.0),
            rotation: Matrix3::identity(),
            dt: DEFAULT_DT_CAP,
        }
    }
}

/// Fits the cube of side `C * max_extent(fg U bg)` around the union's center onto `[0,2]^3`.
pub fn build_domain(fg: &Aabb, bg: &Aabb, params: &DomainParams) -> Result<SimDomain> {
    if params.offset < 1.0 || !params.offset.is_finite() {
        return Err(Error::validation(format!("offset coefficient C = {} must be >= 1", params.offset)));
    }
    let u = fg.union(bg);
    if u.is_empty() || !u.min.iter().chain(u.max.iter()).all(|c| c.is_finite()) {
        return Err(Error::DegenerateDomain("no finite geometry to bound".into()));
    }
    // Extent is measured in sim axes so a rotated scene still fits.
    let corners: Vec<Vector3<f64>> = u.corners().iter().map(|c| params.rotation * c).collect();
    let ru = Aabb::from_points(&corners);
    let extent = ru.extent().max();
    if !(extent > 0.0) {
        return Err(Error::DegenerateDomain("zero-extent scene bounds".into()));
    }
    let side = params.offset * extent;
    let scale = DOMAIN_SIZE / side;
    let translation = Vector3::repeat(1.0) - scale * ru.center();
    let domain = SimDomain {
        scale,
        rotation: params.rotation,
        translation,
        offset: params.offset,
        n: params.n,
        dx: DOMAIN_SIZE / params.n as f64,
        gravity_sim: scale * (params.rotation * params.gravity),
        dt: params.dt,
    };
    domain.validate()?;
    Ok(domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Intrinsics;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn state(p: Vector3<f64>, v: Vector3<f64>) -> ObjectInitState {
        ObjectInitState {
            object_id: 1,
            position: p,
            scale: 1.0,
            orientation: Matrix3::identity(),
            velocity: v,
            angular_velocity: Vector3::zeros(),
            rotation_center: p,
            anchor: p,
        }
    }

    #[test]
    fn bound_motion_examples() {
        let b = bound_motion(&state(Vector3::zeros(), Vector3::zeros()), 0.5, 1.0, &Vector3::zeros());
        assert_eq!(b.min, Vector3::repeat(-0.5));
        assert_eq!(b.max, Vector3::repeat(0.5));
        let b = bound_motion(&state(Vector3::zeros(), Vector3::x()), 0.0, 2.0, &Vector3::zeros());
        assert_eq!((b.min.x, b.max.x), (0.0, 2.0));
        let g = Vector3::new(0.0, -9.8, 0.0);
        let b = bound_motion(&state(Vector3::zeros(), Vector3::new(0.0, 3.0, 0.0)), 0.0, 1.0, &g);
        assert_relative_eq!(b.max.y, 9.0 / 19.6, epsilon = 1e-12);
        assert_relative_eq!(b.min.y, -1.9, epsilon = 1e-12);
    }

    #[test]
    fn build_domain_examples() {
        let unit = Aabb::new(Vector3::repeat(-0.5), Vector3::repeat(0.5));
        let d = build_domain(&unit, &Aabb::empty(), &DomainParams { offset: 1.0, ..Default::default() }).unwrap();
        assert_relative_eq!(d.scale, 2.0);
        assert_relative_eq!(d.to_sim(&Vector3::zeros()), Vector3::repeat(1.0));
        assert_relative_eq!(d.to_sim(&Vector3::repeat(0.5)), Vector3::repeat(2.0));

        let four = Aabb::new(Vector3::zeros(), Vector3::repeat(4.0));
        let d = build_domain(&Aabb::empty(), &four, &DomainParams::default()).unwrap();
        assert_relative_eq!(d.scale, 0.4, epsilon = 1e-15);
        assert_relative_eq!(d.gravity_sim, Vector3::new(0.0, -3.92, 0.0), epsilon = 1e-12);

        let err = build_domain(&Aabb::empty(), &Aabb::empty(), &DomainParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateDomain(_)));
        let point = Aabb::new(Vector3::zeros(), Vector3::zeros());
        assert!(build_domain(&point, &Aabb::empty(), &DomainParams::default()).is_err());
        let err = build_domain(&unit, &unit, &DomainParams { offset: 0.5, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains(">= 1"));
    }

    #[test]
    fn velocity_scaling() {
        let d = SimDomain {
            scale: 0.5,
            rotation: Matrix3::identity(),
            translation: Vector3::repeat(1.0),
            offset: 1.0,
            n: 64,
            dx: 2.0 / 64.0,
            gravity_sim: Vector3::zeros(),
            dt: 1e-3,
        };
        assert_eq!(d.vel_to_sim(&Vector3::x()), Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn domain_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("domain.json");
        let d = build_domain(
            &Aabb::new(Vector3::new(-1.0, 0.0, 0.3), Vector3::new(2.0, 1.0, 0.9)),
            &Aabb::empty(),
            &DomainParams::default(),
        )
        .unwrap();
        d.save(&path).unwrap();
        assert_eq!(SimDomain::load(&path).unwrap(), d);
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["\"S\"", "\"R\"", "\"t\"", "\"C\"", "\"n\"", "\"dx\"", "\"gravity_sim\"", "\"dt\""] {
            assert!(text.contains(key), "{key}");
        }
    }

    fn rot(ax: f64, ay: f64, az: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_euler_angles(ax, ay, az).matrix()
    }

    proptest! {
        #[test]
        fn containment_and_round_trip(
            lo in prop::array::uniform3(-10.0f64..10.0),
            size in prop::array::uniform3(0.01f64..5.0),
            c in 1.0f64..3.0,
            angles in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let min = Vector3::from(lo);
            let max = min + Vector3::from(size);
            let bx = Aabb::new(min, max);
            let d = build_domain(&bx, &Aabb::empty(), &DomainParams {
                offset: c,
                rotation: rot(angles[0], angles[1], angles[2]),
                ..Default::default()
            }).unwrap();
            for corner in bx.corners() {
                let s = d.to_sim(&corner);
                prop_assert!(s.iter().all(|&v| (-1e-12..=2.0 + 1e-12).contains(&v)));
                let back = d.from_sim(&s);
                prop_assert!((back - corner).norm() <= 1e-9 * (1.0 + corner.norm()));
            }
        }

        #[test]
        fn camera_conjugation_preserves_pixels(
            p in prop::array::uniform3(-1.0f64..1.0),
            angles in prop::array::uniform3(-0.3f64..0.3),
            dangles in prop::array::uniform3(-3.0f64..3.0),
            scale in 0.05f64..20.0,
            t in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let cam = CameraFrame::new(
                Intrinsics { fx: 300.0, fy: 310.0, cx: 160.0, cy: 120.0 },
                rot(angles[0], angles[1], angles[2]),
                Vector3::new(0.1, -0.2, 4.0),
                320, 240, 0,
            );
            let d = SimDomain {
                scale,
                rotation: rot(dangles[0], dangles[1], dangles[2]),
                translation: Vector3::from(t),
                offset: 1.0,
                n: 32,
                dx: 2.0 / 32.0,
                gravity_sim: Vector3::zeros(),
                dt: 1e-3,
            };
            let x = Vector3::from(p);
            let (a, za) = cam.project(&x).unwrap();
            let (b, zb) = d.camera_to_sim(&cam).project(&d.to_sim(&x)).unwrap();
            prop_assert!((a - b).norm() < 1e-4);
            prop_assert!((zb - scale * za).abs() < 1e-9 * (1.0 + zb.abs()));
        }
    }
}
