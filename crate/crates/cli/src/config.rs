//! Pipeline configuration (TOML). Every field has a default, so an empty file
//! is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simloop_core::domain::{DEFAULT_CFL, DEFAULT_DT_CAP, DEFAULT_GRID, DEFAULT_OFFSET};
use simloop_core::render::Interpolation;
use simloop_core::ttco::Sampling;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bundle: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Materials table replacing the built-in one.
    pub material_table: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime choose.
    pub threads: usize,
    pub background: BackgroundConfig,
    pub estimate: EstimateConfig,
    pub domain: DomainConfig,
    pub simulate: SimulateConfig,
    pub render: RenderConfig,
    pub flow: FlowConfig,
    pub target: TargetConfig,
    pub stages: StageToggles,
}

/// Background point filtering; unset values scale with the scene extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub voxel_size: Option<f64>,
    pub min_neighbors: Option<usize>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Default key-frame spacing (s).
    pub dt_default: f64,
    /// Explicit 1-based key frames.
    pub key_frames: Option<[usize; 2]>,
    pub estimate_scaling: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            dt_default: 0.2,
            key_frames: None,
            estimate_scaling: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    /// Offset coefficient C.
    #[serde(rename = "C")]
    pub offset: f64,
    pub n: usize,
    /// Substep cap (s).
    pub dt: f64,
    /// Motion horizon for the swept object bounds (s); defaults to the video duration.
    pub horizon: Option<f64>,
    pub gravity: [f64; 3],
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            offset: DEFAULT_OFFSET,
            n: DEFAULT_GRID,
            dt: DEFAULT_DT_CAP,
            horizon: None,
            gravity: [0.0, -9.8, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub ppc: usize,
    pub jitter: f64,
    pub cfl: f64,
    /// Background friction coefficient.
    pub collider_friction: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            ppc: 8,
            jitter: 0.25,
            cfl: DEFAULT_CFL,
            collider_friction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Splat radius in pixels; derived from particle spacing and depth when unset.
    pub splat_radius: Option<f64>,
    /// Neighbors used when interpolating simulator flow.
    pub flow_k: usize,
    pub interpolation: Interpolation,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            splat_radius: None,
            flow_k: 4,
            interpolation: Interpolation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Blend ring width around the rendered foreground (px).
    pub dilation: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { dilation: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub k: usize,
    pub radius: f64,
    pub interpolation: Interpolation,
    pub sampling: Sampling,
}

impl Default for TargetConfig {
    fn default() -> Self {
        let t = simloop_core::ttco::TargetParams::default();
        TargetConfig {
            k: t.k,
            radius: t.radius,
            interpolation: t.interpolation,
            sampling: t.sampling,
        }
    }
}

/// Stages run by `pipeline`; disabled stages are skipped and must already
/// have their outputs in place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub ingest: bool,
    pub estimate: bool,
    pub init_domain: bool,
    pub simulate: bool,
    pub render: bool,
    pub fuse_flow: bool,
    pub build_target: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            ingest: true,
            estimate: true,
            init_domain: true,
            simulate: true,
            render: true,
            fuse_flow: true,
            build_target: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading config {}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                bad.push(msg.to_string());
            }
        };
        let d = &self.domain;
        check(d.offset.is_finite() && d.offset >= 1.0, "domain.C must satisfy C >= 1");
        check(d.n >= 8, "domain.n must be >= 8");
        check(d.dt > 0.0 && d.dt.is_finite(), "domain.dt must be positive");
        check(d.horizon.is_none_or(|h| h > 0.0 && h.is_finite()), "domain.horizon must be positive");
        check(d.gravity.iter().all(|g| g.is_finite()), "domain.gravity must be finite");
        let s = &self.simulate;
        check(s.ppc >= 1, "simulate.ppc must be >= 1");
        check((0.0..0.5).contains(&s.jitter), "simulate.jitter must lie in [0, 0.5)");
        check(s.cfl > 0.0 && s.cfl <= 1.0, "simulate.cfl must lie in (0, 1]");
        check(s.collider_friction >= 0.0 && s.collider_friction.is_finite(), "simulate.collider_friction must be >= 0");
        let e = &self.estimate;
        check(e.dt_default > 0.0 && e.dt_default.is_finite(), "estimate.dt_default must be positive");
        check(e.key_frames.is_none_or(|[a, b]| a >= 1 && b >= 1), "estimate.key_frames are 1-based");
        let b = &self.background;
        check(b.voxel_size.is_none_or(|v| v > 0.0), "background.voxel_size must be positive");
        check(b.radius.is_none_or(|v| v > 0.0), "background.radius must be positive");
        check(
            self.render.splat_radius.is_none_or(|r| r > 0.0 && r.is_finite()),
            "render.splat_radius must be positive",
        );
        check(self.render.flow_k >= 1, "render.flow_k must be >= 1");
        check(self.target.k >= 1, "target.k must be >= 1");
        check(self.target.radius > 0.0, "target.radius must be positive");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::validation(bad.join("; ")))
        }
    }
}
