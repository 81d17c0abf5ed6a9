//! MLS-MPM simulation of elastic solids: particle seeding, the background
//! collider, the time stepper, and frame-aligned trajectories.

mod collider;
mod particles;
mod seed;
mod solver;
mod trajectory;

pub use collider::{build_collider, project_contact, Collider, NORMAL_NEIGHBORS};
pub use particles::{particle_id, polar_rotation, ParticleSet, SimMaterial};
pub use seed::{placed_vertices, seed_particles, SeedParams};
#[cfg(test)]
pub(crate) use seed::winding_number;
pub use solver::{GridTotals, Solver, StepParams};
pub use trajectory::{SimTrajectory, Snapshot};

use crate::domain::SimDomain;
use crate::error::{Error, Result};

/// Substeps shorter than this fraction of the nominal step are skipped when
/// landing on a frame time.
const LANDING_EPS: f64 = 1e-9;

/// Runs the simulation for `frames - 1` frame intervals at `fps`, recording
/// the initial state and one snapshot exactly at each frame time.
/// `observer` sees the particle state after every substep.
pub fn simulate_frames(
    mut particles: ParticleSet,
    collider: &Collider,
    domain: &SimDomain,
    frames: usize,
    fps: f64,
    params: &StepParams,
    mut observer: impl FnMut(f64, &ParticleSet),
) -> Result<SimTrajectory> {
    particles.validate()?;
    if frames == 0 || !(fps > 0.0) {
        return Err(Error::validation("simulation needs at least one frame and fps > 0"));
    }
    let mut solver = Solver::new(domain);
    let mut traj = SimTrajectory::new(&particles, fps);
    traj.push(0.0, &particles);
    let mut t = 0.0;
    for frame in 1..frames {
        let target = frame as f64 / fps;
        loop {
            let remaining = target - t;
            if remaining <= LANDING_EPS * params.dt_max {
                break;
            }
            let dt = solver.stable_dt(&particles, params.cfl).min(params.dt_max).min(remaining);
            solver
                .step(&mut particles, collider, dt, params.cfl)
                .map_err(|e| Error::BlowUpAtFrame {
                    frame: frame + 1,
                    source: Box::new(e),
                })?;
            t += dt;
            observer(t, &particles);
        }
        t = target;
        traj.push(target, &particles);
    }
    log::info!("simulated {} particles for {} substeps", particles.len(), solver.steps());
    Ok(traj)
}

/// `simulate_frames` with `round(duration * fps) + 1` snapshots.
pub fn simulate(
    particles: ParticleSet,
    collider: &Collider,
    domain: &SimDomain,
    duration: f64,
    fps: f64,
    params: &StepParams,
) -> Result<SimTrajectory> {
    if !(duration > 0.0) {
        return Err(Error::validation("duration must be positive"));
    }
    let frames = (duration * fps).round() as usize + 1;
    simulate_frames(particles, collider, domain, frames, fps, params, |_, _| {})
}
