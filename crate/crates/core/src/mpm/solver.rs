
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::collider::{project_contact, Collider};
use super::particles::{polar_rotation, ParticleSet};
use crate::domain::{SimDomain, DEFAULT_CFL, DOMAIN_SIZE};
use crate::error::{Error, Result};

const FREE: u32 = u32::MAX;
/// Nodes this close to a domain face (in cells) are held at zero velocity.
const STICKY_LAYER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub cfl: f64,
    /// Substep cap (s).
    pub dt_max: f64,
}

impl StepParams {
    pub fn for_domain(domain: &SimDomain) -> Self {
        StepParams {
            cfl: DEFAULT_CFL,
            dt_max: domain.dt,
        }
    }
}

/// Per-particle quantities reused by every node that gathers from the particle.
struct Prep {
    key: u32,
    fx: Vector3<f64>,
    w: [[f64; 3]; 3],
    affine: Matrix3<f64>,
    mass: f64,
    momentum: Vector3<f64>,
    friction: f64,
    damping: f64,
}

/// Sums over the grid after the most recent P2G (before gravity and boundaries).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridTotals {
    pub mass: f64,
    pub momentum: Vector3<f64>,
    pub active_nodes: usize,
}

/// MLS-MPM solver on an `(n+1)^3` node grid covering `[0,2]^3`.
///
/// P2G is a gather: particles are sorted by base cell and every active node
/// sums its 27 neighbor cells in a fixed order, so results do not depend on
/// the thread count.
pub struct Solver {
    n: usize,
    nodes: usize,
    dx: f64,
    inv_dx: f64,
    gravity: Vector3<f64>,
    dt_nominal: f64,
    cell_slot: Vec<u32>,
    node_slot: Vec<u32>,
    steps: u64,
    totals: GridTotals,
}

#[inline]
fn weights(fx: f64) -> [f64; 3] {
    [
        0.5 * (1.5 - fx).powi(2),
        0.75 - (fx - 1.0).powi(2),
        0.5 * (fx - 0.5).powi(2),
    ]
}

impl Solver {
    pub fn new(domain: &SimDomain) -> Self {
        let nodes = domain.n + 1;
        Solver {
            n: domain.n,
            nodes,
            dx: domain.dx,
            inv_dx: 1.0 / domain.dx,
            gravity: domain.gravity_sim,
            dt_nominal: domain.dt,
            cell_slot: vec![FREE; nodes * nodes * nodes],
            node_slot: vec![FREE; nodes * nodes * nodes],
            steps: 0,
            totals: GridTotals::default(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn grid_totals(&self) -> GridTotals {
        self.totals
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    /// `cfl * dx / (v_max + c_wave)`.
    pub fn stable_dt(&self, p: &ParticleSet, cfl: f64) -> f64 {
        cfl * self.dx / (p.max_speed() + p.max_wave_speed())
    }

    #[inline]
    fn key(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nodes + j) * self.nodes + k
    }

    #[inline]
    fn coords(&self, key: usize) -> [usize; 3] {
        let n = self.nodes;
        [key / (n * n), (key / n) % n, key % n]
    }

    /// One symplectic-Euler MLS-MPM step.
    pub fn step(&mut self, p: &mut ParticleSet, collider: &Collider, dt: f64, cfl: f64) -> Result<()> {
        let bound = self.stable_dt(p, cfl);
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-9) {
            return Err(Error::CflViolation { dt, bound });
        }
        let (dx, inv_dx) = (self.dx, self.inv_dx);
        let d_inv = 4.0 * inv_dx * inv_dx;
        let count = p.len();

        let prep: Vec<Prep> = (0..count)
            .into_par_iter()
            .map(|i| {
                let xg = p.x[i] * inv_dx;
                let base = xg.map(|c| (c - 0.5).floor());
                let fx = xg - base;
                let mat = &p.materials[p.material[i] as usize];
                let f = &p.f[i];
                let r = polar_rotation(f);
                let j = f.determinant();
                let tau = 2.0 * mat.mu * (f - r) * f.transpose()
                    + Matrix3::from_diagonal_element(mat.lambda * (j - 1.0) * j);
                let affine = -dt * p.volume[i] * d_inv * tau + p.mass[i] * p.c[i];
                let b = base.map(|c| c as usize);
                Prep {
                    key: self.key(b.x, b.y, b.z) as u32,
                    fx,
                    w: [weights(fx.x), weights(fx.y), weights(fx.z)],
                    affine,
                    mass: p.mass[i],
                    momentum: p.mass[i] * p.v[i],
                    friction: mat.friction,
                    damping: mat.damping,
                }
            })
            .collect();

        let mut order: Vec<u32> = (0..count as u32).collect();
        order.par_sort_unstable_by_key(|&i| (prep[i as usize].key, i));
        let mut cells: Vec<(u32, u32, u32)> = Vec::new();
        for (s, &pi) in order.iter().enumerate() {
            let key = prep[pi as usize].key;
            match cells.last_mut() {
                Some(c) if c.0 == key => c.2 = s as u32 + 1,
                _ => cells.push((key, s as u32, s as u32 + 1)),
            }
        }
        for (ci, c) in cells.iter().enumerate() {
            self.cell_slot[c.0 as usize] = ci as u32;
        }
        let mut active: Vec<u32> = Vec::with_capacity(cells.len() * 27);
        for c in &cells {
            let [i, j, k] = self.coords(c.0 as usize);
            for a in 0..3 {
                for b in 0..3 {
                    for d in 0..3 {
                        active.push(self.key(i + a, j + b, k + d) as u32);
                    }
                }
            }
        }
        active.par_sort_unstable();
        active.dedup();
        for (s, &node) in active.iter().enumerate() {
            self.node_slot[node as usize] = s as u32;
        }

        let this = &*self;
        let grid: Vec<(f64, Vector3<f64>, Vector3<f64>)> = active
            .par_iter()
            .map(|&node| {
                let [i, j, k] = this.coords(node as usize);
                let (mut m, mut mom, mut fr, mut dm) = (0.0, Vector3::zeros(), 0.0, 0.0);
                for a in 0..3usize {
                    for b in 0..3usize {
                        for d in 0..3usize {
                            if i < a || j < b || k < d {
                                continue;
                            }
                            let slot = this.cell_slot[this.key(i - a, j - b, k - d)];
                            if slot == FREE {
                                continue;
                            }
                            let (_, start, end) = cells[slot as usize];
                            let offset = Vector3::new(a as f64, b as f64, d as f64);
                            for &pi in &order[start as usize..end as usize] {
                                let q = &prep[pi as usize];
                                let w = q.w[0][a] * q.w[1][b] * q.w[2][d];
                                let dpos = (offset - q.fx) * dx;
                                m += w * q.mass;
                                mom += w * (q.momentum + q.affine * dpos);
                                fr += w * q.mass * q.friction;
                                dm += w * q.mass * q.damping;
                            }
                        }
                    }
                }
                let mut v = if m > 0.0 { mom / m } else { Vector3::zeros() };
                v += dt * this.gravity;
                // Per-step velocity retention, normalized to the nominal step.
                if m > 0.0 && dm < m {
                    v *= (dm / m).powf(dt / this.dt_nominal);
                }
                let lo = STICKY_LAYER;
                let hi = this.n - STICKY_LAYER;
                if [i, j, k].iter().any(|&c| c < lo || c > hi) {
                    v = Vector3::zeros();
                } else if let Some(normal) = collider.normal_at(node as usize) {
                    let mu = if m > 0.0 {
                        0.5 * (fr / m + collider.friction)
                    } else {
                        collider.friction
                    };
                    v = project_contact(&v, normal, mu);
                }
                (m, mom, v)
            })
            .collect();
        self.totals = GridTotals {
            mass: grid.iter().map(|g| g.0).sum(),
            momentum: grid.iter().fold(Vector3::zeros(), |a, g| a + g.1),
            active_nodes: grid.len(),
        };

        let this = &*self;
        let lo = dx;
        let hi = DOMAIN_SIZE - dx;
        let updated: Vec<(Vector3<f64>, Vector3<f64>, Matrix3<f64>, Matrix3<f64>)> = (0..count)
            .into_par_iter()
            .map(|pi| {
                let q = &prep[pi];
                let [i, j, k] = this.coords(q.key as usize);
                let mut v = Vector3::zeros();
                let mut b_mat = Matrix3::zeros();
                for a in 0..3usize {
                    for b in 0..3usize {
                        for d in 0..3usize {
                            let slot = this.node_slot[this.key(i + a, j + b, k + d)];
                            let vi = grid[slot as usize].2;
                            let w = q.w[0][a] * q.w[1][b] * q.w[2][d];
                            let dpos = (Vector3::new(a as f64, b as f64, d as f64) - q.fx) * dx;
                            v += w * vi;
                            b_mat += w * vi * dpos.transpose();
                        }
                    }
                }
                let c = d_inv * b_mat;
                let f = (Matrix3::identity() + dt * c) * p.f[pi];
                let mut x = p.x[pi] + dt * v;
                for a in 0..3 {
                    if x[a] < lo {
                        x[a] = lo;
                        v[a] = v[a].abs();
                    } else if x[a] > hi {
                        x[a] = hi;
                        v[a] = -v[a].abs();
                    }
                }
                (x, v, c, f)
            })
            .collect();

        for c in &cells {
            self.cell_slot[c.0 as usize] = FREE;
        }
        for &node in &active {
            self.node_slot[node as usize] = FREE;
        }
        self.steps += 1;

        for (i, (x, v, c, f)) in updated.into_iter().enumerate() {
            let finite = x.iter().chain(v.iter()).chain(f.iter()).all(|s| s.is_finite());
            if !finite || !(f.determinant() > 0.0) {
                return Err(Error::BlowUp {
                    step: self.steps,
                    particle: p.id[i],
                });
            }
            p.x[i] = x;
            p.v[i] = v;
            p.c[i] = c;
            p.f[i] = f;
        }
        Ok(())
    }
}
