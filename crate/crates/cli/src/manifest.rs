//! `manifest.json`: per-stage input hash, output hashes, wall time and warnings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::stages::{Context, Stage, StageRecord};

pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: Stage,
    pub inputs_hash: String,
    pub outputs: Vec<OutputEntry>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageEntry>,
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(hex::encode(Sha256::digest(read(path)?)))
}

/// Files under `path` (or `path` itself), sorted, as paths relative to `path`.
fn files_under(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![PathBuf::new()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let dir = path.join(&rel);
        let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(format!("listing {}: {e}", dir.display())))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(format!("listing {}: {e}", dir.display())))?;
            let child = rel.join(entry.file_name());
            if entry.path().is_dir() {
                stack.push(child);
            } else {
                out.push(child);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn hash_tree(hasher: &mut Sha256, label: &Path, path: &Path) -> CliResult<()> {
    for rel in files_under(path)? {
        let (name, file) = if rel.as_os_str().is_empty() {
            (label.to_path_buf(), path.to_path_buf())
        } else {
            (label.join(&rel), path.join(&rel))
        };
        hasher.update(name.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(Sha256::digest(read(&file)?));
    }
    Ok(())
}

/// Hash of the stage name, the configuration and every input file's contents.
pub fn inputs_hash(stage: Stage, cfg: &PipelineConfig, ctx: &Context, rec: &StageRecord) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(stage.name().as_bytes());
    // Paths are excluded so that the same inputs in another location hash equally.
    let mut cfg = cfg.clone();
    cfg.bundle = None;
    cfg.out = None;
    let text = toml::to_string(&cfg).map_err(|e| CliError::new(crate::error::EXIT_OTHER, e.to_string()))?;
    h.update(text.as_bytes());
    if let Some(table) = &ctx.cfg.material_table {
        hash_tree(&mut h, Path::new("@material_table"), table)?;
    }
    if let Some(video) = &ctx.video {
        hash_tree(&mut h, Path::new("@video"), video)?;
    }
    if rec.bundle_inputs {
        hash_tree(&mut h, Path::new("@bundle"), &ctx.bundle)?;
    }
    let mut inputs = rec.inputs.clone();
    inputs.sort();
    inputs.dedup();
    for rel in &inputs {
        hash_tree(&mut h, rel, &ctx.out.join(rel))?;
    }
    Ok(hex::encode(h.finalize()))
}

pub fn stage_entry(stage: Stage, ctx: &Context, rec: &StageRecord, wall_time_s: f64) -> CliResult<StageEntry> {
    let outputs = rec
        .outputs
        .iter()
        .map(|p| {
            Ok(OutputEntry {
                path: p.clone(),
                sha256: sha256_file(&ctx.out.join(p))?,
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(StageEntry {
        stage,
        inputs_hash: inputs_hash(stage, &ctx.cfg, ctx, rec)?,
        outputs,
        wall_time_s,
        warnings: rec.warnings.clone(),
    })
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    /// Loads the manifest in `out`, or an empty one if there is none.
    pub fn load_or_default(out: &Path) -> CliResult<Self> {
        let p = out.join(MANIFEST_JSON);
        if p.exists() {
            Self::load(&p)
        } else {
            Ok(Manifest::default())
        }
    }

    pub fn save(&self, out: &Path) -> CliResult<()> {
        let p = out.join(MANIFEST_JSON);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::new(crate::error::EXIT_OTHER, e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(|e| CliError::io(format!("writing {}: {e}", p.display())))
    }

    /// Replaces the entry for `entry.stage`, keeping pipeline order.
    pub fn upsert(&mut self, entry: StageEntry) {
        self.stages.retain(|s| s.stage != entry.stage);
        self.stages.push(entry);
        self.stages.sort_by_key(|s| s.stage);
    }

    /// Every output hash, in stage order; wall times and warnings excluded.
    pub fn output_hashes(&self) -> Vec<(Stage, PathBuf, String)> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter().map(move |o| (s.stage, o.path.clone(), o.sha256.clone())))
            .collect()
    }
}
