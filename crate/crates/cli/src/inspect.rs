//! Read-only summaries of pipeline artifacts.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use simloop_core::mpm::SimTrajectory;
use simloop_core::ply::read_ply;
use simloop_core::raster::{read_f32_raster, RgbRaster};
use simloop_core::render::{read_correspondences, read_flo};
use simloop_core::ttco::LossReport;

use crate::error::{CliError, CliResult};

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn stats_line(values: &mut [f64]) -> String {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    format!(
        "mean {mean:.4}, p50 {:.4}, p90 {:.4}, p99 {:.4}, max {:.4}",
        percentile(values, 50.0),
        percentile(values, 90.0),
        percentile(values, 99.0),
        values.last().copied().unwrap_or(f64::NAN)
    )
}

fn has_trajectory_magic(path: &Path) -> CliResult<bool> {
    let mut magic = [0u8; 4];
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    Ok(f.read_exact(&mut magic).is_ok() && &magic == b"SLTR")
}

pub fn inspect(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::io(format!("{} does not exist", path.display())));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut s = String::new();
    match ext {
        "bin" if has_trajectory_magic(path)? => {
            let t = SimTrajectory::read(path)?;
            writeln!(s, "{} particles, {} frames, {} fps", t.num_particles(), t.num_frames(), t.fps).unwrap();
            let mut objects: Vec<u32> = t.object_ids.clone();
            objects.sort_unstable();
            objects.dedup();
            for id in objects {
                let count = t.object_ids.iter().filter(|&&o| o == id).count();
                let first = t.com(0, Some(id)).unwrap();
                let last = t.com(t.num_frames() - 1, Some(id)).unwrap();
                writeln!(
                    s,
                    "  object {id}: {count} particles, COM [{:.4}, {:.4}, {:.4}] -> [{:.4}, {:.4}, {:.4}] (sim units)",
                    first.x, first.y, first.z, last.x, last.y, last.z
                )
                .unwrap();
            }
        }
        "bin" => {
            let c = read_correspondences(path, 0, 0)?;
            let mut disp: Vec<f64> = c.entries.iter().filter_map(|e| e.p_ref.map(|p| (p - e.q).norm())).collect();
            writeln!(s, "{} correspondences, {} visible in the reference frame", c.entries.len(), c.visible_count()).unwrap();
            if !disp.is_empty() {
                writeln!(s, "displacement (px): {}", stats_line(&mut disp)).unwrap();
            }
        }
        "flo" => {
            let f = read_flo(path, 0, 1)?;
            let mut mags = f.magnitudes();
            writeln!(s, "{}x{} flow, {} valid pixels", f.width(), f.height(), f.valid_count()).unwrap();
            if !mags.is_empty() {
                writeln!(s, "magnitude (px): {}", stats_line(&mut mags)).unwrap();
            }
        }
        "f32" => {
            let r = read_f32_raster(path)?;
            let mut finite: Vec<f64> = r.data.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
            writeln!(s, "{}x{} float raster, {} finite values", r.width, r.height, finite.len()).unwrap();
            if !finite.is_empty() {
                writeln!(s, "values: {}", stats_line(&mut finite)).unwrap();
            }
        }
        "png" => {
            let r = RgbRaster::load_png(path)?;
            let mean = r.data.iter().fold([0.0; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]]);
            let n = r.data.len() as f64;
            writeln!(s, "{}x{} image, mean RGB [{:.3}, {:.3}, {:.3}]", r.width, r.height, mean[0] / n, mean[1] / n, mean[2] / n)
                .unwrap();
        }
        "ply" => {
            let p = read_ply(path)?;
            writeln!(s, "{} points, {} faces", p.positions.len(), p.faces.len()).unwrap();
        }
        "json" => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
            if let Ok(report) = serde_json::from_str::<LossReport>(&text) {
                writeln!(s, "{:>6} {:>14} {:>8} {:>8} {:>14} {:>14}", "frame", "L_tex", "n_frame1", "n_render", "L_frame1", "L_render").unwrap();
                for f in &report.per_frame {
                    writeln!(
                        s,
                        "{:>6} {:>14.6e} {:>8} {:>8} {:>14.6e} {:>14.6e}",
                        f.t, f.l_tex, f.n_frame1, f.n_render, f.l_frame1, f.l_render
                    )
                    .unwrap();
                }
                writeln!(s, "L_TTCO = {:.6e}", report.l_ttco).unwrap();
            } else {
                let value: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
                s = serde_json::to_string_pretty(&value).unwrap() + "\n";
            }
        }
        _ => {
            return Err(CliError::validation(format!("{}: unknown artifact format", path.display())));
        }
    }
    Ok(s)
}
