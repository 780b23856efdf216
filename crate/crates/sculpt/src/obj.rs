//! Wavefront OBJ import/export.
//!
//! Export writes `v`, per-corner `vt` and `f v/vt` triples plus an MTL file
//! referencing the texture image, which is the lowest common denominator
//! for pulling generated meshes into existing graphics tools. The raster v
//! axis points down while OBJ texture coordinates point up, so `vt` lines
//! are written flipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::body::ClothedMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::uv::UvAtlas;

#[derive(Debug, Clone)]
pub struct ImportedMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Per-face-corner UVs when the file carries `vt` records, already
    /// flipped back to the raster convention (v down).
    pub face_corner_uv: Option<Vec<[[f64; 2]; 3]>>,
}

/// Parses `v`, `vt` and triangular `f` statements (`f` entries may be
/// `v`, `v/vt` or `v/vt/vn`). Quads and higher polygons are rejected to
/// keep registrations honest about topology.
pub fn import_obj(path: &Path) -> Result<ImportedMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |lineno: usize, what: &str| {
        Error::ModelFormat(format!("{}:{}: {what}", path.display(), lineno + 1))
    };
    let mut vertices = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut corner_uv_ids: Vec<Option<[u32; 3]>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(lineno, &format!("bad vertex: {e}")))?;
                if coords.len() != 3 {
                    return Err(bad(lineno, "vertex needs 3 coordinates"));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("vt") => {
                let coords: Vec<f64> = parts
                    .take(2)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(lineno, &format!("bad texture coordinate: {e}")))?;
                if coords.len() != 2 {
                    return Err(bad(lineno, "vt needs 2 coordinates"));
                }
                uvs.push([coords[0], 1.0 - coords[1]]);
            }
            Some("f") => {
                let mut vidx = Vec::new();
                let mut tidx = Vec::new();
                for t in parts {
                    let mut fields = t.split('/');
                    let vi = fields
                        .next()
                        .and_then(|s| s.parse::<i64>().ok())
                        .filter(|&v| v >= 1)
                        .ok_or_else(|| bad(lineno, "bad face indices"))?;
                    vidx.push((vi - 1) as u32);
                    if let Some(ts) = fields.next().filter(|s| !s.is_empty()) {
                        let ti = ts
                            .parse::<i64>()
                            .ok()
                            .filter(|&v| v >= 1)
                            .ok_or_else(|| bad(lineno, "bad face indices"))?;
                        tidx.push((ti - 1) as u32);
                    }
                }
                if vidx.len() != 3 {
                    return Err(bad(lineno, "only triangles are supported"));
                }
                faces.push([vidx[0], vidx[1], vidx[2]]);
                corner_uv_ids.push(if tidx.len() == 3 {
                    Some([tidx[0], tidx[1], tidx[2]])
                } else {
                    None
                });
            }
            _ => {}
        }
    }
    for f in &faces {
        if f.iter().any(|&i| i as usize >= vertices.len()) {
            return Err(Error::ModelFormat(format!(
                "{}: face references missing vertex",
                path.display()
            )));
        }
    }
    let face_corner_uv = if !faces.is_empty() && corner_uv_ids.iter().all(|c| c.is_some()) {
        let mut corners = Vec::with_capacity(faces.len());
        for ids in corner_uv_ids.into_iter().flatten() {
            let mut c = [[0.0; 2]; 3];
            for (k, &ti) in ids.iter().enumerate() {
                let uv = uvs.get(ti as usize).ok_or_else(|| {
                    Error::ModelFormat(format!("{}: face references missing vt", path.display()))
                })?;
                c[k] = *uv;
            }
            corners.push(c);
        }
        Some(corners)
    } else {
        None
    };
    Ok(ImportedMesh {
        vertices,
        faces,
        face_corner_uv,
    })
}

/// Writes `mesh` with per-corner UVs, an MTL next to it and (when given) the
/// texture PNG name wired into the material.
pub fn export_obj(
    path: &Path,
    mesh: &ClothedMesh,
    atlas: Option<&UvAtlas>,
    texture_png: Option<&str>,
) -> Result<()> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into());
    let mtl_name = format!("{stem}.mtl");

    let mut out = String::new();
    writeln!(out, "mtllib {mtl_name}").ok();
    writeln!(out, "usemtl material0").ok();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", fmt(v[0]), fmt(v[1]), fmt(v[2])).ok();
    }
    match atlas {
        Some(atlas) => {
            if atlas.face_corner_uv.len() != mesh.faces.len() {
                return Err(Error::ModelFormat(
                    "atlas face count differs from mesh".into(),
                ));
            }
            for corners in &atlas.face_corner_uv {
                for uv in corners {
                    writeln!(out, "vt {} {}", fmt(uv[0]), fmt(1.0 - uv[1])).ok();
                }
            }
            for (fi, f) in mesh.faces.iter().enumerate() {
                let t = fi * 3;
                writeln!(
                    out,
                    "f {}/{} {}/{} {}/{}",
                    f[0] + 1,
                    t + 1,
                    f[1] + 1,
                    t + 2,
                    f[2] + 1,
                    t + 3
                )
                .ok();
            }
        }
        None => {
            for f in &mesh.faces {
                writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).ok();
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;

    let mut mtl = String::new();
    writeln!(mtl, "newmtl material0").ok();
    writeln!(mtl, "Ka 1.0 1.0 1.0").ok();
    writeln!(mtl, "Kd 1.0 1.0 1.0").ok();
    writeln!(mtl, "Ks 0.0 0.0 0.0").ok();
    if let Some(tex) = texture_png {
        writeln!(mtl, "map_Kd {tex}").ok();
    }
    fs::write(path.with_file_name(mtl_name), mtl)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.8}")
}
