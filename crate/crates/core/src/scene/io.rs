use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{CameraFrame, DepthMap, FeatureMatchSet, Intrinsics, ObjectMask, ObjectMesh, SceneBundle};
use crate::error::{Error, Result};
use crate::material::MaterialDescriptor;
use crate::ply::{read_ply, write_ply, PlyData};
use crate::raster::{read_f32_raster, write_f32_raster, Raster, RgbRaster};

/// `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub object_ids: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    frame: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaterialRecord {
    object_id: u32,
    composition: String,
    bounce: String,
    roughness: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatchRow {
    frame_a: usize,
    frame_b: usize,
    xa: f64,
    ya: f64,
    xb: f64,
    yb: f64,
    dt_seconds: f64,
}

pub(crate) fn frame_name(i: usize) -> String {
    format!("{:04}", i + 1)
}

fn require(root: &Path, rel: impl AsRef<Path>) -> Result<PathBuf> {
    let p = root.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::IncompleteBundle(p))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Loads and validates a bundle directory.
pub fn load_bundle(root: &Path) -> Result<SceneBundle> {
    let meta: BundleMeta = read_json(&require(root, "meta.json")?)?;
    let t = meta.num_frames;

    let mut frames = Vec::with_capacity(t);
    let mut depths = Vec::with_capacity(t);
    let mut masks = Vec::with_capacity(t);
    for i in 0..t {
        let name = frame_name(i);
        frames.push(RgbRaster::load_png(&require(root, format!("frames/{name}.png"))?)?);
        depths.push(DepthMap {
            raster: read_f32_raster(&require(root, format!("depth/{name}.f32"))?)?,
        });
        masks.push(ObjectMask {
            labels: Raster::<u8>::load_png(&require(root, format!("masks/{name}.png"))?)?,
            frame: i,
        });
    }

    let records: Vec<CameraRecord> = read_json(&require(root, "cameras.json")?)?;
    let mut cameras: Vec<Option<CameraFrame>> = vec![None; t];
    for rec in records {
        if rec.frame == 0 || rec.frame > t {
            return Err(Error::validation(format!(
                "cameras.json: frame {} outside 1..={t}",
                rec.frame
            )));
        }
        let slot = &mut cameras[rec.frame - 1];
        if slot.is_some() {
            return Err(Error::validation(format!(
                "cameras.json: duplicate entry for frame {}",
                rec.frame
            )));
        }
        *slot = Some(CameraFrame::new(
            Intrinsics {
                fx: rec.fx,
                fy: rec.fy,
                cx: rec.cx,
                cy: rec.cy,
            },
            Matrix3::from_row_slice(&rec.r),
            Vector3::from(rec.t),
            meta.width,
            meta.height,
            rec.frame - 1,
        ));
    }
    let cameras = cameras
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| Error::validation(format!("cameras.json: no entry for frame {}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut meshes = BTreeMap::new();
    let mut matches = BTreeMap::new();
    for &id in &meta.object_ids {
        let ply = read_ply(&require(root, format!("objects/obj_{id:02}.ply"))?)?;
        meshes.insert(
            id,
            ObjectMesh {
                object_id: id,
                vertices: ply.positions,
                triangles: ply.faces,
                colors: ply.colors,
            },
        );
        matches.insert(id, read_matches(&require(root, format!("matches/obj_{id:02}.csv"))?, id)?);
    }

    let mat_records: Vec<MaterialRecord> = read_json(&require(root, "materials.json")?)?;
    let mut materials = BTreeMap::new();
    for rec in mat_records {
        let d = MaterialDescriptor::parse(&rec.composition, &rec.bounce, &rec.roughness)?;
        materials.insert(rec.object_id, d);
    }

    let bundle = SceneBundle {
        meta,
        frames,
        depths,
        masks,
        cameras,
        meshes,
        matches,
        materials,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn read_matches(path: &Path, object_id: u32) -> Result<Vec<FeatureMatchSet>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut sets: Vec<FeatureMatchSet> = Vec::new();
    for (k, row) in rdr.deserialize::<MatchRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: k + 2,
            message: format!("{}: {e}", path.display()),
        })?;
        if row.frame_a == 0 || row.frame_b == 0 {
            return Err(Error::Parse {
                line: k + 2,
                message: format!("{}: frame numbers are 1-based", path.display()),
            });
        }
        let (a, b) = (row.frame_a - 1, row.frame_b - 1);
        let set = match sets.iter_mut().position(|s| s.frame_a == a && s.frame_b == b) {
            Some(i) => &mut sets[i],
            None => {
                sets.push(FeatureMatchSet {
                    object_id,
                    frame_a: a,
                    frame_b: b,
                    matches: Vec::new(),
                    dt: row.dt_seconds,
                });
                sets.last_mut().unwrap()
            }
        };
        if set.dt != row.dt_seconds {
            return Err(Error::validation(format!(
                "{}: inconsistent dt_seconds for frames ({}, {})",
                path.display(),
                row.frame_a,
                row.frame_b
            )));
        }
        set.matches.push([row.xa, row.ya, row.xb, row.yb]);
    }
    Ok(sets)
}

/// Writes a bundle in the canonical directory layout.
pub fn write_bundle(bundle: &SceneBundle, root: &Path) -> Result<()> {
    for sub in ["frames", "depth", "masks", "objects", "matches"] {
        create_dir(&root.join(sub))?;
    }
    write_json(&root.join("meta.json"), &bundle.meta)?;
    for i in 0..bundle.num_frames() {
        let name = frame_name(i);
        bundle.frames[i].save_png(&root.join(format!("frames/{name}.png")))?;
        write_f32_raster(&root.join(format!("depth/{name}.f32")), &bundle.depths[i].raster)?;
        bundle.masks[i]
            .labels
            .save_png(&root.join(format!("masks/{name}.png")))?;
    }
    let cams: Vec<CameraRecord> = bundle
        .cameras
        .iter()
        .map(|c| {
            let mut r = [0.0; 9];
            for row in 0..3 {
                for col in 0..3 {
                    r[row * 3 + col] = c.rotation[(row, col)];
                }
            }
            CameraRecord {
                frame: c.frame + 1,
                fx: c.intrinsics.fx,
                fy: c.intrinsics.fy,
                cx: c.intrinsics.cx,
                cy: c.intrinsics.cy,
                r,
                t: [c.translation.x, c.translation.y, c.translation.z],
            }
        })
        .collect();
    write_json(&root.join("cameras.json"), &cams)?;
    for (id, mesh) in &bundle.meshes {
        write_ply(
            &root.join(format!("objects/obj_{id:02}.ply")),
            &PlyData {
                positions: mesh.vertices.clone(),
                colors: mesh.colors.clone(),
                frames: None,
                faces: mesh.triangles.clone(),
            },
        )?;
    }
    for &id in &bundle.meta.object_ids {
        let path = root.join(format!("matches/obj_{id:02}.csv"));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_record(["frame_a", "frame_b", "xa", "ya", "xb", "yb", "dt_seconds"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for set in bundle.matches.get(&id).map(Vec::as_slice).unwrap_or_default() {
            for m in &set.matches {
                w.serialize(MatchRow {
                    frame_a: set.frame_a + 1,
                    frame_b: set.frame_b + 1,
                    xa: m[0],
                    ya: m[1],
                    xb: m[2],
                    yb: m[3],
                    dt_seconds: set.dt,
                })
                .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let mats: Vec<MaterialRecord> = bundle
        .materials
        .iter()
        .map(|(&object_id, d)| MaterialRecord {
            object_id,
            composition: d.composition.to_string(),
            bounce: d.bounce.to_string(),
            roughness: d.roughness.to_string(),
        })
        .collect();
    write_json(&root.join("materials.json"), &mats)
}
