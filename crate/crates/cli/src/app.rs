//! Argument parsing and command dispatch.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use simloop_core::material::MaterialDescriptor;
use simloop_core::synth::FallingBall;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::inspect::inspect;
use crate::manifest::{stage_entry, Manifest};
use crate::stages::{run_stage, Context, Stage};

#[derive(Debug, Parser)]
#[command(name = "simloop", version, about = "Physics-simulation guidance pipeline for video generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene bundle directory.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only this stage (with `pipeline`).
    #[arg(long)]
    pub stage: Option<Stage>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "SIMLOOP_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Ingest(Common),
    Estimate(Common),
    InitDomain(Common),
    Simulate(Common),
    Render(Common),
    FuseFlow(Common),
    BuildTarget(Common),
    EvalLoss {
        #[command(flatten)]
        common: Common,
        /// Candidate video frames (`%04d.png`); defaults to the bundle's frames.
        #[arg(long)]
        video: Option<PathBuf>,
    },
    /// Run every enabled stage in order.
    Pipeline(Common),
    /// Print a summary of an artifact.
    Inspect { path: PathBuf },
    /// Write the synthetic falling-ball scene bundle.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "rubber")]
        composition: String,
        #[arg(long, default_value = "high")]
        bounce: String,
        #[arg(long, default_value = "smooth")]
        roughness: String,
        #[arg(long, default_value_t = 25)]
        frames: usize,
    },
}

fn resolve(common: &Common, video: Option<PathBuf>) -> CliResult<Context> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if let Some(b) = &common.bundle {
        cfg.bundle = Some(b.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    let bundle = cfg.bundle.clone().ok_or_else(|| CliError::validation("--bundle is required"))?;
    let out = cfg.out.clone().ok_or_else(|| CliError::validation("--out is required"))?;
    if !bundle.is_dir() {
        return Err(CliError::io(format!("bundle directory {} does not exist", bundle.display())));
    }
    init_threads(cfg.threads);
    Ok(Context { cfg, bundle, out, video })
}

fn init_threads(threads: usize) {
    // Fails harmlessly if the global pool is already initialized (in-process reuse).
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
}

fn run_and_record(stages: &[Stage], ctx: &Context) -> CliResult<()> {
    let mut manifest = Manifest::load_or_default(&ctx.out)?;
    for &stage in stages {
        log::info!("running stage {stage}");
        let start = Instant::now();
        let rec = run_stage(stage, ctx)?;
        let entry = stage_entry(stage, ctx, &rec, start.elapsed().as_secs_f64()).map_err(|e| e.in_stage(stage.name()))?;
        manifest.upsert(entry);
        manifest.save(&ctx.out)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(c) => run_and_record(&[Stage::Ingest], &resolve(&c, None)?),
        Command::Estimate(c) => run_and_record(&[Stage::Estimate], &resolve(&c, None)?),
        Command::InitDomain(c) => run_and_record(&[Stage::InitDomain], &resolve(&c, None)?),
        Command::Simulate(c) => run_and_record(&[Stage::Simulate], &resolve(&c, None)?),
        Command::Render(c) => run_and_record(&[Stage::Render], &resolve(&c, None)?),
        Command::FuseFlow(c) => run_and_record(&[Stage::FuseFlow], &resolve(&c, None)?),
        Command::BuildTarget(c) => run_and_record(&[Stage::BuildTarget], &resolve(&c, None)?),
        Command::EvalLoss { common, video } => {
            let ctx = resolve(&common, video)?;
            run_and_record(&[Stage::EvalLoss], &ctx)?;
            print!("{}", inspect(&ctx.out.join(crate::stages::LOSS_REPORT_JSON))?);
            Ok(())
        }
        Command::Pipeline(c) => {
            let ctx = resolve(&c, None)?;
            let stages: Vec<Stage> = match c.stage {
                Some(s) => vec![s],
                None => Stage::PIPELINE.iter().copied().filter(|s| s.enabled(&ctx.cfg)).collect(),
            };
            run_and_record(&stages, &ctx)
        }
        Command::Inspect { path } => {
            print!("{}", inspect(&path)?);
            Ok(())
        }
        Command::MakeFixture {
            out,
            composition,
            bounce,
            roughness,
            frames,
        } => {
            if frames == 0 {
                return Err(CliError::validation("--frames must be >= 1"));
            }
            let fixture = FallingBall {
                material: MaterialDescriptor::parse(&composition, &bounce, &roughness)?,
                frames,
                ..Default::default()
            };
            fixture.write(&out)?;
            println!("wrote {} ({} frames)", out.display(), frames);
            Ok(())
        }
    }
}
