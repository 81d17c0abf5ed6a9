//! ASCII PLY for object meshes and background point clouds.
//!
//! Colors are written as `float` properties in [0,1]; the reader also accepts
//! `uchar` colors (scaled by 1/255).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    /// Optional integer `frame` vertex property.
    pub frames: Option<Vec<u32>>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    ty: String,
    list: bool,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn write_ply(path: &Path, data: &PlyData) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", data.positions.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property float red\nproperty float green\nproperty float blue\n");
    if data.frames.is_some() {
        s.push_str("property int frame\n");
    }
    if !data.faces.is_empty() {
        let _ = writeln!(s, "element face {}", data.faces.len());
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    for (i, p) in data.positions.iter().enumerate() {
        let c = data.colors.get(i).copied().unwrap_or([0.0; 3]);
        let _ = write!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
        if let Some(f) = &data.frames {
            let _ = write!(s, " {}", f[i]);
        }
        s.push('\n');
    }
    for f in &data.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn parse_ply(text: &str) -> Result<PlyData> {
    let perr = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(perr(1, "missing 'ply' magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| perr(0, "unterminated header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(perr(ln, format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| perr(ln, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", _, ty, name] => elements
                .last_mut()
                .ok_or_else(|| perr(ln, "property before element".into()))?
                .props
                .push(Property {
                    name: name.to_string(),
                    ty: ty.to_string(),
                    list: true,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| perr(ln, "property before element".into()))?
                .props
                .push(Property {
                    name: name.to_string(),
                    ty: ty.to_string(),
                    list: false,
                }),
            ["end_header"] => break,
            _ => return Err(perr(ln, format!("unrecognized header line {line:?}"))),
        }
    }

    let mut out = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let find = |n: &str| el.props.iter().position(|p| p.name == n && !p.list);
        let (ix, iy, iz) = (find("x"), find("y"), find("z"));
        let color_idx = [find("red"), find("green"), find("blue")];
        let frame_idx = find("frame");
        if is_vertex && (ix.is_none() || iy.is_none() || iz.is_none()) {
            return Err(perr(0, "vertex element lacks x/y/z".into()));
        }
        if is_vertex && frame_idx.is_some() {
            out.frames = Some(Vec::with_capacity(el.count));
        }
        for _ in 0..el.count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| perr(0, format!("file ends inside element {}", el.name)))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if is_face {
                let n: usize = toks
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| perr(ln, "bad face row".into()))?;
                if n < 3 || toks.len() < n + 1 {
                    return Err(perr(ln, "face row needs at least 3 indices".into()));
                }
                let idx: Vec<u32> = toks[1..=n]
                    .iter()
                    .map(|t| t.parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| perr(ln, "bad face index".into()))?;
                // Fan-triangulate polygons.
                for k in 1..n - 1 {
                    out.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
                continue;
            }
            if !is_vertex {
                continue;
            }
            if toks.len() < el.props.len() {
                return Err(perr(ln, format!("vertex row has {} values", toks.len())));
            }
            let num = |i: usize| -> Result<f64> {
                toks[i]
                    .parse::<f64>()
                    .map_err(|_| perr(ln, format!("bad number {:?}", toks[i])))
            };
            out.positions.push(Vector3::new(
                num(ix.unwrap())?,
                num(iy.unwrap())?,
                num(iz.unwrap())?,
            ));
            let mut c = [1.0; 3];
            for (k, slot) in color_idx.iter().enumerate() {
                if let Some(i) = *slot {
                    let v = num(i)?;
                    c[k] = if matches!(el.props[i].ty.as_str(), "uchar" | "uint8") {
                        v / 255.0
                    } else {
                        v
                    };
                }
            }
            out.colors.push(c);
            if let (Some(i), Some(frames)) = (frame_idx, out.frames.as_mut()) {
                frames.push(num(i)? as u32);
            }
        }
    }
    Ok(out)
}
