//! Pipeline stages. Each stage reads the bundle and earlier artifacts from the
//! output directory and writes its own artifacts there.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simloop_core::domain::{bound_motion, build_domain, DomainParams, SimDomain};
use simloop_core::dynamics::{estimate_object, EstimateParams, ObjectInitState};
use simloop_core::geometry::Aabb;
use simloop_core::material::MaterialTable;
use simloop_core::mpm::{
    build_collider, seed_particles, simulate_frames, Collider, ParticleSet, SeedParams, SimTrajectory, StepParams,
};
use simloop_core::ply::{read_ply, write_ply};
use simloop_core::raster::{write_f32_raster, Raster, RgbRaster};
use simloop_core::render::{
    compute_correspondences, correspondences_to_flow, default_splat_radius, fuse_flow, median_depth, read_correspondences,
    read_flo, render_all, write_correspondences, write_flo, FlowField,
};
use simloop_core::scene::{
    build_background_points, filter_background_points, load_bundle, BackgroundPointCloud, FilterParams, SceneBundle,
};
use simloop_core::ttco::{build_warp_target, densify_correspondences, eval_loss, load_targets, save_targets, TargetParams};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Estimate,
    InitDomain,
    Simulate,
    Render,
    FuseFlow,
    BuildTarget,
    EvalLoss,
}

impl Stage {
    /// Stages run by `pipeline`, in order.
    pub const PIPELINE: [Stage; 7] = [
        Stage::Ingest,
        Stage::Estimate,
        Stage::InitDomain,
        Stage::Simulate,
        Stage::Render,
        Stage::FuseFlow,
        Stage::BuildTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Estimate => "estimate",
            Stage::InitDomain => "init-domain",
            Stage::Simulate => "simulate",
            Stage::Render => "render",
            Stage::FuseFlow => "fuse-flow",
            Stage::BuildTarget => "build-target",
            Stage::EvalLoss => "eval-loss",
        }
    }

    pub fn enabled(self, cfg: &PipelineConfig) -> bool {
        let s = &cfg.stages;
        match self {
            Stage::Ingest => s.ingest,
            Stage::Estimate => s.estimate,
            Stage::InitDomain => s.init_domain,
            Stage::Simulate => s.simulate,
            Stage::Render => s.render,
            Stage::FuseFlow => s.fuse_flow,
            Stage::BuildTarget => s.build_target,
            Stage::EvalLoss => true,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::PIPELINE
            .iter()
            .chain(std::iter::once(&Stage::EvalLoss))
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const BACKGROUND_PLY: &str = "background.ply";
pub const INGEST_JSON: &str = "ingest.json";
pub const INIT_STATES_JSON: &str = "init_states.json";
pub const DOMAIN_JSON: &str = "domain.json";
pub const TRAJECTORY_BIN: &str = "trajectory.bin";
pub const RENDER_JSON: &str = "render.json";
pub const LOSS_REPORT_JSON: &str = "loss_report.json";

pub fn frame_file(dir: &str, frame: usize, ext: &str) -> PathBuf {
    PathBuf::from(dir).join(format!("{:04}.{ext}", frame + 1))
}

/// Resolved paths and settings shared by all stages.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: PipelineConfig,
    pub bundle: PathBuf,
    pub out: PathBuf,
    /// Candidate video directory for `eval-loss`; the template frames by default.
    pub video: Option<PathBuf>,
}

/// What a stage read and wrote (paths relative to the bundle or output root).
#[derive(Debug, Clone, Default)]
pub struct StageRecord {
    pub bundle_inputs: bool,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl StageRecord {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

impl Context {
    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    /// Fails with a dependency error naming `producer` if `rel` is missing.
    fn require(&self, rel: &str, producer: Stage, rec: &mut StageRecord) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(CliError::validation(format!(
                "dependency missing: {} (run `{producer}` first)",
                p.display()
            )));
        }
        rec.inputs.push(PathBuf::from(rel));
        Ok(p)
    }

    fn mkdir(&self, rel: &str) -> CliResult<()> {
        let p = self.path(rel);
        std::fs::create_dir_all(&p).map_err(|e| CliError::io(format!("creating {}: {e}", p.display())))
    }

    fn bundle(&self) -> CliResult<SceneBundle> {
        Ok(load_bundle(&self.bundle)?)
    }

    fn materials(&self) -> CliResult<MaterialTable> {
        match &self.cfg.material_table {
            Some(p) => Ok(MaterialTable::load(p)?),
            None => Ok(MaterialTable::default()),
        }
    }
}

pub fn run_stage(stage: Stage, ctx: &Context) -> CliResult<StageRecord> {
    std::fs::create_dir_all(&ctx.out).map_err(|e| CliError::io(format!("creating {}: {e}", ctx.out.display())))?;
    let mut rec = StageRecord::default();
    let result = match stage {
        Stage::Ingest => ingest(ctx, &mut rec),
        Stage::Estimate => estimate(ctx, &mut rec),
        Stage::InitDomain => init_domain(ctx, &mut rec),
        Stage::Simulate => simulate(ctx, &mut rec),
        Stage::Render => render(ctx, &mut rec),
        Stage::FuseFlow => fuse(ctx, &mut rec),
        Stage::BuildTarget => build_target(ctx, &mut rec),
        Stage::EvalLoss => eval(ctx, &mut rec),
    };
    result.map_err(|e| e.in_stage(stage.name()))?;
    Ok(rec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(crate::error::EXIT_OTHER, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestSummary {
    frames: usize,
    width: usize,
    height: usize,
    fps: f64,
    object_ids: Vec<u32>,
    raw_points: usize,
    filtered_points: usize,
    voxel_size: f64,
}

fn ingest(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let cloud = build_background_points(&bundle)?;
    let defaults = FilterParams::for_extent(cloud.bounds().extent().max());
    let b = &ctx.cfg.background;
    let params = FilterParams {
        voxel_size: b.voxel_size.unwrap_or(defaults.voxel_size),
        min_neighbors: b.min_neighbors.unwrap_or(defaults.min_neighbors),
        radius: b.radius.unwrap_or(defaults.radius),
    };
    let filtered = filter_background_points(&cloud, &params);
    if filtered.is_empty() {
        rec.warn("background filtering removed every point".into());
    }
    write_ply(&ctx.path(BACKGROUND_PLY), &filtered.to_ply())?;
    let summary = IngestSummary {
        frames: bundle.num_frames(),
        width: bundle.meta.width,
        height: bundle.meta.height,
        fps: bundle.fps(),
        object_ids: bundle.object_ids().to_vec(),
        raw_points: cloud.len(),
        filtered_points: filtered.len(),
        voxel_size: params.voxel_size,
    };
    write_json(&ctx.path(INGEST_JSON), &summary)?;
    rec.outputs.extend([BACKGROUND_PLY.into(), INGEST_JSON.into()]);
    Ok(())
}

/// One entry of `init_states.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub object_id: u32,
    pub position: Vector3<f64>,
    pub scale: f64,
    pub orientation: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub center: Vector3<f64>,
    pub anchor: Vector3<f64>,
    /// Bounding radius of the placed mesh (m).
    pub radius: f64,
    pub theta_deg: f64,
    pub residual_px: f64,
    /// 1-based key frames.
    pub frame_a: usize,
    pub frame_b: usize,
    pub scale_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

impl InitRecord {
    pub fn state(&self) -> ObjectInitState {
        ObjectInitState {
            object_id: self.object_id,
            position: self.position,
            scale: self.scale,
            orientation: self.orientation,
            velocity: self.v,
            angular_velocity: self.omega,
            rotation_center: self.center,
            anchor: self.anchor,
        }
    }
}

fn estimate(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let e = &ctx.cfg.estimate;
    let params = EstimateParams {
        dt_default: e.dt_default,
        key_frames: e.key_frames.map(|[a, b]| (a - 1, b - 1)),
        estimate_scaling: e.estimate_scaling,
        seed: ctx.cfg.seed,
    };
    let mut records = Vec::new();
    for &id in bundle.object_ids() {
        let (state, placement, report) = estimate_object(&bundle, id, &params)?;
        for w in &report.warnings {
            rec.warn(format!("object {id}: {w}"));
        }
        records.push(InitRecord {
            object_id: id,
            position: state.position,
            scale: state.scale,
            orientation: state.orientation,
            v: state.velocity,
            omega: state.angular_velocity,
            center: state.rotation_center,
            anchor: state.anchor,
            radius: placement.radius,
            theta_deg: report.theta_deg,
            residual_px: report.residual_px,
            frame_a: report.frame_a + 1,
            frame_b: report.frame_b + 1,
            scale_ratio: report.scale_ratio,
            warnings: report.warnings,
        });
    }
    write_json(&ctx.path(INIT_STATES_JSON), &records)?;
    rec.outputs.push(INIT_STATES_JSON.into());
    Ok(())
}

fn load_background(path: &Path) -> CliResult<BackgroundPointCloud> {
    Ok(BackgroundPointCloud::from_ply(read_ply(path)?))
}

fn horizon(ctx: &Context, bundle: &SceneBundle) -> f64 {
    ctx.cfg.domain.horizon.unwrap_or(bundle.num_frames() as f64 / bundle.fps())
}

fn init_domain(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let bg = load_background(&ctx.require(BACKGROUND_PLY, Stage::Ingest, rec)?)?;
    let records: Vec<InitRecord> = read_json(&ctx.require(INIT_STATES_JSON, Stage::Estimate, rec)?)?;
    let d = &ctx.cfg.domain;
    let gravity = Vector3::from(d.gravity);
    let h = horizon(ctx, &bundle);
    let fg = records
        .iter()
        .fold(Aabb::empty(), |acc, r| acc.union(&bound_motion(&r.state(), r.radius, h, &gravity)));
    let params = DomainParams {
        offset: d.offset,
        n: d.n,
        gravity,
        rotation: Matrix3::identity(),
        dt: d.dt,
    };
    let domain = build_domain(&fg, &bg.bounds(), &params)?;
    domain.save(&ctx.path(DOMAIN_JSON))?;
    rec.outputs.push(DOMAIN_JSON.into());
    Ok(())
}

/// Everything the simulate stage feeds to the solver.
pub struct SimulationSetup {
    pub particles: ParticleSet,
    pub collider: Collider,
    pub domain: SimDomain,
    pub frames: usize,
    pub fps: f64,
    pub params: StepParams,
}

/// Loads the simulate stage's inputs and seeds particles and collider.
pub fn prepare_simulation(ctx: &Context) -> CliResult<SimulationSetup> {
    prepare(ctx, &mut StageRecord::default())
}

fn prepare(ctx: &Context, rec: &mut StageRecord) -> CliResult<SimulationSetup> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let domain = SimDomain::load(&ctx.require(DOMAIN_JSON, Stage::InitDomain, rec)?)?;
    let records: Vec<InitRecord> = read_json(&ctx.require(INIT_STATES_JSON, Stage::Estimate, rec)?)?;
    let bg = load_background(&ctx.require(BACKGROUND_PLY, Stage::Ingest, rec)?)?;
    let table = ctx.materials()?;
    let s = &ctx.cfg.simulate;
    let mut particles = ParticleSet::default();
    for r in &records {
        let mesh = bundle
            .meshes
            .get(&r.object_id)
            .ok_or_else(|| CliError::validation(format!("object {} has no mesh", r.object_id)))?;
        let descriptor = bundle
            .materials
            .get(&r.object_id)
            .ok_or_else(|| CliError::validation(format!("object {} has no material descriptor", r.object_id)))?;
        let material = table.map_descriptor(descriptor);
        let seed = SeedParams {
            ppc: s.ppc,
            jitter: s.jitter,
            seed: ctx.cfg.seed.wrapping_add(r.object_id as u64),
        };
        particles.append(seed_particles(mesh, &r.state(), &domain, &material, &seed)?);
    }
    let viewpoint = bundle.cameras[0].center();
    let collider = build_collider(&bg.points, &viewpoint, &domain, s.collider_friction);
    if collider.occupied_count() == 0 {
        rec.warn("collider is empty: no background geometry inside the domain".into());
    }
    let params = StepParams {
        cfl: s.cfl,
        dt_max: domain.dt,
    };
    Ok(SimulationSetup {
        particles,
        collider,
        domain,
        frames: bundle.num_frames(),
        fps: bundle.fps(),
        params,
    })
}

fn simulate(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    let SimulationSetup {
        particles,
        collider,
        domain,
        frames,
        fps,
        params,
    } = prepare(ctx, rec)?;
    let traj = simulate_frames(particles, &collider, &domain, frames, fps, &params, |_, _| {})?;
    traj.write(&ctx.path(TRAJECTORY_BIN))?;
    rec.outputs.push(TRAJECTORY_BIN.into());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RenderSummary {
    splat_radius: f64,
    frames: usize,
    /// Per frame: particles visible in that frame and, of those, visible in frame 1.
    visible: Vec<[usize; 2]>,
}

fn render(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let domain = SimDomain::load(&ctx.require(DOMAIN_JSON, Stage::InitDomain, rec)?)?;
    let traj = SimTrajectory::read(&ctx.require(TRAJECTORY_BIN, Stage::Simulate, rec)?)?;
    if traj.num_frames() != bundle.num_frames() {
        return Err(CliError::validation(format!(
            "trajectory has {} frames, bundle has {}",
            traj.num_frames(),
            bundle.num_frames()
        )));
    }
    let cams: Vec<_> = bundle.cameras.iter().map(|c| domain.camera_to_sim(c)).collect();
    let splat = match ctx.cfg.render.splat_radius {
        Some(r) => r,
        None => {
            let spacing = domain.dx / (ctx.cfg.simulate.ppc as f64).cbrt();
            let depth = median_depth(&traj.frames[0].x, &cams[0])
                .ok_or_else(|| CliError::validation("no particle in front of the first camera"))?;
            default_splat_radius(cams[0].intrinsics.fx, spacing, depth)
        }
    };
    let renders = render_all(&traj, &cams, splat);
    for dir in ["render", "mask", "depth", "corr", "sim_flow"] {
        ctx.mkdir(dir)?;
    }
    let frames = traj.num_frames();
    let results: Vec<CliResult<(Vec<PathBuf>, [usize; 2])>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let r = &renders[t];
            let mut out = Vec::new();
            let rgb = frame_file("render", t, "png");
            r.rgb.save_png(&ctx.path(&rgb))?;
            let mask = frame_file("mask", t, "png");
            r.mask.save_png(&ctx.path(&mask))?;
            let depth = frame_file("depth", t, "f32");
            let metric = Raster::from_vec(r.depth.width, r.depth.height, r.depth.data.iter().map(|&z| (z as f64 / domain.scale) as f32).collect());
            write_f32_raster(&ctx.path(&depth), &metric)?;
            out.extend([rgb, mask, depth]);
            let mut counts = [0, 0];
            if t >= 1 {
                let corr = compute_correspondences(&traj, t, 0, &cams[t], &cams[0], r, &renders[0]);
                counts = [corr.entries.len(), corr.visible_count()];
                let p = frame_file("corr", t, "bin");
                write_correspondences(&ctx.path(&p), &corr)?;
                out.push(p);
            }
            if t + 1 < frames {
                let next = compute_correspondences(&traj, t, t + 1, &cams[t], &cams[t + 1], r, &renders[t + 1]);
                let flow = correspondences_to_flow(&next, &r.mask, ctx.cfg.render.flow_k, ctx.cfg.render.interpolation);
                let p = frame_file("sim_flow", t, "flo");
                write_flo(&ctx.path(&p), &flow)?;
                out.push(p);
            }
            Ok((out, counts))
        })
        .collect();
    let mut visible = Vec::new();
    for r in results {
        let (out, counts) = r?;
        rec.outputs.extend(out);
        visible.push(counts);
    }
    write_json(
        &ctx.path(RENDER_JSON),
        &RenderSummary {
            splat_radius: splat,
            frames,
            visible,
        },
    )?;
    rec.outputs.push(RENDER_JSON.into());
    Ok(())
}

fn fuse(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let frames = bundle.num_frames();
    ctx.mkdir("flow")?;
    let mut missing = 0;
    for t in 0..frames.saturating_sub(1) {
        let sim_rel = frame_file("sim_flow", t, "flo");
        let sim = read_flo(&ctx.require(sim_rel.to_str().unwrap(), Stage::Render, rec)?, t, t + 1)?;
        let mask_rel = frame_file("mask", t, "png");
        let mask = Raster::<u8>::load_png(&ctx.require(mask_rel.to_str().unwrap(), Stage::Render, rec)?)?;
        let template_path = ctx.bundle.join(frame_file("flow", t, "flo"));
        let template = if template_path.exists() {
            read_flo(&template_path, t, t + 1)?
        } else {
            missing += 1;
            let mut zero = FlowField::zeros(sim.width(), sim.height(), t, t + 1);
            zero.valid.data.fill(true);
            zero
        };
        let fused = fuse_flow(&sim, &template, &mask, ctx.cfg.flow.dilation)?;
        let out = frame_file("flow", t, "flo");
        write_flo(&ctx.path(&out), &fused)?;
        rec.outputs.push(out);
    }
    if missing > 0 {
        rec.warn(format!(
            "{missing} template flow file(s) missing under {}: zero template flow used",
            ctx.bundle.join("flow").display()
        ));
    }
    Ok(())
}

fn build_target(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    rec.bundle_inputs = true;
    let bundle = ctx.bundle()?;
    let frame1 = &bundle.frames[0];
    let t_cfg = &ctx.cfg.target;
    let params = TargetParams {
        k: t_cfg.k,
        radius: t_cfg.radius,
        interpolation: t_cfg.interpolation,
        sampling: t_cfg.sampling,
    };
    let mut inputs = Vec::new();
    for t in 1..bundle.num_frames() {
        for (dir, ext) in [("corr", "bin"), ("mask", "png"), ("render", "png")] {
            let rel = frame_file(dir, t, ext);
            inputs.push(ctx.require(rel.to_str().unwrap(), Stage::Render, rec)?);
        }
    }
    let targets: Vec<_> = (1..bundle.num_frames())
        .into_par_iter()
        .map(|t| -> CliResult<_> {
            let [corr, mask, rgb] = [&inputs[3 * (t - 1)], &inputs[3 * (t - 1) + 1], &inputs[3 * (t - 1) + 2]];
            let corr = read_correspondences(corr, t, 0)?;
            let mask = Raster::<u8>::load_png(mask)?;
            let rgb = RgbRaster::load_png(rgb)?;
            let dense = densify_correspondences(&corr, &mask, &params);
            Ok(build_warp_target(frame1, &dense, &rgb, &mask, t, params.sampling)?)
        })
        .collect::<CliResult<_>>()?;
    save_targets(&ctx.path("targets"), &targets)?;
    for t in &targets {
        rec.outputs.push(frame_file("targets", t.frame, "png"));
        rec.outputs.push(frame_file("targets", t.frame, "src.png"));
    }
    Ok(())
}

/// Loads `%04d.png` frames (1-based, contiguous from 0001) from `dir`.
pub fn load_video(dir: &Path) -> CliResult<Vec<RgbRaster>> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(format!("{:04}.png", frames.len() + 1));
        if !p.exists() {
            break;
        }
        frames.push(RgbRaster::load_png(&p)?);
    }
    if frames.is_empty() {
        return Err(CliError::io(format!("no frames (0001.png, ...) in {}", dir.display())));
    }
    Ok(frames)
}

fn eval(ctx: &Context, rec: &mut StageRecord) -> CliResult<()> {
    let video_dir = match &ctx.video {
        Some(v) => v.clone(),
        None => {
            rec.bundle_inputs = true;
            ctx.bundle.join("frames")
        }
    };
    let video = load_video(&video_dir)?;
    let dir = ctx.require("targets", Stage::BuildTarget, rec)?;
    let targets = load_targets(&dir)?;
    let report = eval_loss(&video, &targets)?;
    report.save_json(&ctx.path(LOSS_REPORT_JSON))?;
    rec.outputs.push(LOSS_REPORT_JSON.into());
    Ok(())
}
