//! Frame-aligned particle snapshots and the `trajectory.bin` format.
//!
//! Layout (little-endian):
//!
//! ```text
//! header  : b"SLTR" | version u32 = 1 | particles u32 | frames u32 | fps f32
//! frame   : time f32 | particles x record
//! record  : id u64 | position 3xf32 | velocity 3xf32 | color 3xf32 | object_id u32   (48 bytes)
//! ```
//!
//! Positions and velocities are in simulation units.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::particles::ParticleSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SLTR";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;
const RECORD_BYTES: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub x: Vec<Vector3<f64>>,
    pub v: Vec<Vector3<f64>>,
}

/// Particle trajectories sampled at video frame times. Per-particle attributes
/// are stored once; every snapshot has the same particle order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub fps: f64,
    pub ids: Vec<u64>,
    pub colors: Vec<[f64; 3]>,
    pub object_ids: Vec<u32>,
    pub masses: Vec<f64>,
    pub frames: Vec<Snapshot>,
}

impl SimTrajectory {
    pub fn new(particles: &ParticleSet, fps: f64) -> Self {
        SimTrajectory {
            fps,
            ids: particles.id.clone(),
            colors: particles.color.clone(),
            object_ids: particles.object_id.clone(),
            masses: particles.mass.clone(),
            frames: Vec::new(),
        }
    }

    pub fn push(&mut self, time: f64, particles: &ParticleSet) {
        self.frames.push(Snapshot {
            time,
            x: particles.x.clone(),
            v: particles.v.clone(),
        });
    }

    pub fn num_particles(&self) -> usize {
        self.ids.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Mass-weighted center of one object (or of all particles) in frame `t`.
    pub fn com(&self, t: usize, object_id: Option<u32>) -> Option<Vector3<f64>> {
        let (mut m, mut mx) = (0.0, Vector3::zeros());
        for (i, x) in self.frames[t].x.iter().enumerate() {
            if object_id.is_none_or(|o| o == self.object_ids[i]) {
                m += self.masses[i];
                mx += self.masses[i] * x;
            }
        }
        (m > 0.0).then(|| mx / m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let n = self.num_particles();
        let mut buf = Vec::with_capacity(HEADER_BYTES + self.num_frames() * (4 + n * RECORD_BYTES));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_frames() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.fps as f32).to_le_bytes());
        for snap in &self.frames {
            buf.extend_from_slice(&(snap.time as f32).to_le_bytes());
            for i in 0..n {
                buf.extend_from_slice(&self.ids[i].to_le_bytes());
                for c in snap.x[i].iter().chain(snap.v[i].iter()).chain(self.colors[i].iter()) {
                    buf.extend_from_slice(&(*c as f32).to_le_bytes());
                }
                buf.extend_from_slice(&self.object_ids[i].to_le_bytes());
            }
        }
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Reads a trajectory. Masses are not stored; every particle gets unit mass.
    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
        if bytes.len() < HEADER_BYTES || &bytes[0..4] != MAGIC {
            return Err(bad("not a trajectory file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        if u32_at(4) != VERSION {
            return Err(bad("unsupported version"));
        }
        let n = u32_at(8) as usize;
        let frames = u32_at(12) as usize;
        let fps = f32_at(16);
        let frame_bytes = 4 + n * RECORD_BYTES;
        if bytes.len() != HEADER_BYTES + frames * frame_bytes {
            return Err(bad("size does not match header"));
        }
        let mut traj = SimTrajectory {
            fps,
            ids: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            object_ids: Vec::with_capacity(n),
            masses: vec![1.0; n],
            frames: Vec::with_capacity(frames),
        };
        for f in 0..frames {
            let base = HEADER_BYTES + f * frame_bytes;
            let mut snap = Snapshot {
                time: f32_at(base),
                x: Vec::with_capacity(n),
                v: Vec::with_capacity(n),
            };
            for i in 0..n {
                let o = base + 4 + i * RECORD_BYTES;
                let id = u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
                let vals: Vec<f64> = (0..9).map(|k| f32_at(o + 8 + 4 * k)).collect();
                let object = u32_at(o + 44);
                if f == 0 {
                    traj.ids.push(id);
                    traj.colors.push([vals[6], vals[7], vals[8]]);
                    traj.object_ids.push(object);
                } else if traj.ids[i] != id {
                    return Err(bad("particle order differs between frames"));
                }
                snap.x.push(Vector3::new(vals[0], vals[1], vals[2]));
                snap.v.push(Vector3::new(vals[3], vals[4], vals[5]));
            }
            traj.frames.push(snap);
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimTrajectory {
        SimTrajectory {
            fps: 24.0,
            ids: vec![7, (1 << 32) + 3],
            colors: vec![[0.25, 0.5, 1.0], [0.0, 0.125, 0.75]],
            object_ids: vec![1, 2],
            masses: vec![1.0, 1.0],
            frames: (0..3)
                .map(|t| Snapshot {
                    time: t as f64 / 24.0,
                    x: vec![Vector3::new(0.5, 1.0, 1.5 + t as f64 * 0.25), Vector3::repeat(1.0)],
                    v: vec![Vector3::new(0.0, -1.0, 0.5), Vector3::zeros()],
                })
                .collect(),
        }
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.bin");
        let t = sample();
        t.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 20 + 3 * (4 + 2 * 48));
        let r = SimTrajectory::read(&path).unwrap();
        assert_eq!(r.ids, t.ids);
        assert_eq!(r.object_ids, t.object_ids);
        assert_eq!(r.colors, t.colors);
        for (a, b) in r.frames.iter().zip(&t.frames) {
            assert_eq!(a.x, b.x);
            assert!((a.time - b.time).abs() < 1e-7);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        sample().write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(SimTrajectory::read(&path), Err(Error::Format(_))));
    }
}
