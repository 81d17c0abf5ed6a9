use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::material::{clamp_sim_youngs, rescale_material, MaterialParams};

/// Material constants in simulation units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimMaterial {
    pub density: f64,
    pub youngs: f64,
    pub poisson: f64,
    pub mu: f64,
    pub lambda: f64,
    pub friction: f64,
    pub damping: f64,
}

impl SimMaterial {
    /// Rescales metric parameters by `s` (with the stiffness clamp) and derives Lamé constants.
    pub fn from_metric(params: &MaterialParams, s: f64) -> Self {
        let p = clamp_sim_youngs(&rescale_material(params, s), s);
        let (mu, lambda) = p.lame();
        SimMaterial {
            density: p.density,
            youngs: p.youngs,
            poisson: p.poisson,
            mu,
            lambda,
            friction: p.friction,
            damping: p.damping,
        }
    }

    /// Dilatational wave speed `sqrt((lambda + 2 mu) / rho)` in sim units per second.
    pub fn wave_speed(&self) -> f64 {
        ((self.lambda + 2.0 * self.mu) / self.density).sqrt()
    }
}

/// Structure-of-arrays particle state. Indices are stable; `id` is the persistent identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleSet {
    pub id: Vec<u64>,
    pub x: Vec<Vector3<f64>>,
    pub v: Vec<Vector3<f64>>,
    pub f: Vec<Matrix3<f64>>,
    pub c: Vec<Matrix3<f64>>,
    pub mass: Vec<f64>,
    pub volume: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub object_id: Vec<u32>,
    /// Index into `materials`.
    pub material: Vec<u32>,
    pub materials: Vec<SimMaterial>,
}

/// Particle ID: object in the high word, seeding index in the low word.
pub fn particle_id(object_id: u32, index: u32) -> u64 {
    ((object_id as u64) << 32) | index as u64
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Concatenates another set; its material indices are remapped.
    pub fn append(&mut self, other: ParticleSet) {
        let offset = self.materials.len() as u32;
        self.id.extend(other.id);
        self.x.extend(other.x);
        self.v.extend(other.v);
        self.f.extend(other.f);
        self.c.extend(other.c);
        self.mass.extend(other.mass);
        self.volume.extend(other.volume);
        self.color.extend(other.color);
        self.object_id.extend(other.object_id);
        self.material.extend(other.material.into_iter().map(|m| m + offset));
        self.materials.extend(other.materials);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.id.len(),
            self.v.len(),
            self.f.len(),
            self.c.len(),
            self.mass.len(),
            self.volume.len(),
            self.color.len(),
            self.object_id.len(),
            self.material.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::validation("particle arrays have inconsistent lengths"));
        }
        let mut ids = self.id.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("duplicate particle IDs"));
        }
        if self.mass.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::validation("particle masses must be positive"));
        }
        if self.material.iter().any(|&m| m as usize >= self.materials.len()) {
            return Err(Error::validation("particle material index out of range"));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn momentum(&self) -> Vector3<f64> {
        self.mass
            .iter()
            .zip(&self.v)
            .fold(Vector3::zeros(), |a, (m, v)| a + *m * v)
    }

    pub fn center_of_mass(&self) -> Vector3<f64> {
        self.mass
            .iter()
            .zip(&self.x)
            .fold(Vector3::zeros(), |a, (m, x)| a + *m * x)
            / self.total_mass()
    }

    /// Center of mass of one object's particles.
    pub fn object_com(&self, object_id: u32) -> Option<Vector3<f64>> {
        let (mut m, mut mx) = (0.0, Vector3::zeros());
        for i in 0..self.len() {
            if self.object_id[i] == object_id {
                m += self.mass[i];
                mx += self.mass[i] * self.x[i];
            }
        }
        (m > 0.0).then(|| mx / m)
    }

    pub fn max_speed(&self) -> f64 {
        self.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `sqrt(E/rho)` over the materials in use.
    pub fn max_wave_speed(&self) -> f64 {
        self.materials.iter().map(SimMaterial::wave_speed).fold(0.0, f64::max)
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.mass
            .iter()
            .zip(&self.v)
            .map(|(m, v)| 0.5 * m * v.norm_squared())
            .sum()
    }

    /// Fixed-corotated strain energy `V0 (mu |F - R|^2 + lambda/2 (J - 1)^2)`.
    pub fn elastic_energy(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let m = &self.materials[self.material[i] as usize];
                let f = &self.f[i];
                let r = polar_rotation(f);
                let j = f.determinant();
                self.volume[i] * (m.mu * (f - r).norm_squared() + 0.5 * m.lambda * (j - 1.0) * (j - 1.0))
            })
            .sum()
    }

    /// Gravitational potential relative to the origin.
    pub fn potential_energy(&self, gravity: &Vector3<f64>) -> f64 {
        self.mass
            .iter()
            .zip(&self.x)
            .map(|(m, x)| -m * gravity.dot(x))
            .sum()
    }

    pub fn total_energy(&self, gravity: &Vector3<f64>) -> f64 {
        self.kinetic_energy() + self.elastic_energy() + self.potential_energy(gravity)
    }
}

/// Rotation factor of the polar decomposition `F = R S`, with `det R = +1`.
pub fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = f.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    if (u * v_t).determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let k = svd.singular_values.imin();
        u.column_mut(k).neg_mut();
    }
    u * v_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polar_rotation_recovers_rotation() {
        let r = *nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
        let s = Matrix3::new(1.2, 0.1, 0.0, 0.1, 0.9, 0.05, 0.0, 0.05, 1.1);
        assert_relative_eq!(polar_rotation(&(r * s)), r, epsilon = 1e-10);
        assert_relative_eq!(polar_rotation(&Matrix3::identity()), Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn ids_pack_object_and_index() {
        assert_eq!(particle_id(2, 7), (2u64 << 32) + 7);
        assert_ne!(particle_id(1, 0), particle_id(0, 1));
    }

    #[test]
    fn rest_state_has_no_elastic_energy() {
        let m = SimMaterial::from_metric(
            &MaterialParams {
                density: 1000.0,
                youngs: 1e6,
                poisson: 0.3,
                friction: 0.1,
                damping: 1.0,
            },
            1.0,
        );
        let p = ParticleSet {
            id: vec![0],
            x: vec![Vector3::repeat(1.0)],
            v: vec![Vector3::zeros()],
            f: vec![Matrix3::identity()],
            c: vec![Matrix3::zeros()],
            mass: vec![1.0],
            volume: vec![1e-3],
            color: vec![[1.0; 3]],
            object_id: vec![1],
            material: vec![0],
            materials: vec![m],
        };
        assert_eq!(p.elastic_energy(), 0.0);
        p.validate().unwrap();
    }
}
