//! Simulation-in-the-loop motion guidance.
//!
//! Perception artifacts of a template video (frames, depth, masks, cameras,
//! object meshes, feature matches, material descriptors) are turned into an
//! initialized MLS-MPM simulation, whose particle trajectories are rendered into
//! masks, depth, pixel correspondences and optical flow. The flow is fused with
//! template-video flow, and the correspondences drive warp targets for the
//! masked texture-consistency loss.

pub mod error;
pub mod domain;
pub mod dynamics;
pub mod geometry;
pub mod material;
pub mod ply;
pub mod raster;
pub mod mpm;
pub mod render;
pub mod scene;
pub mod synth;
pub mod ttco;

pub use error::{Error, Result};
