//! Staged command-line pipeline: scene bundle in, simulation guidance
//! artifacts (renders, correspondences, fused flow, warp targets) out.

pub mod app;
pub mod config;
pub mod error;
pub mod inspect;
pub mod manifest;
pub mod stages;
