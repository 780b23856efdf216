//! UV-space rasters and the bidirectional mapping between per-vertex
//! quantities and those rasters.
//!
//! Clothing geometry lives in a displacement map: a raster of canonical-space
//! offsets indexed by the body's UV parameterization. Sampling pulls raster
//! values back to vertices (bilinear at each vertex UV); baking pushes
//! per-vertex values into the raster (barycentric interpolation over each UV
//! triangle). Texel `(row i, col j)` has its center at
//! `u = (j + 0.5) / R`, `v = (i + 0.5) / R`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::math::Vec3;

/// UV parameterization of a fixed-topology mesh.
///
/// `vertex_uv` drives sampling (one UV per vertex); `face_corner_uv` drives
/// baking and rendering, and may disagree with `vertex_uv` across declared
/// seams so both sides of a seam get written.
#[derive(Debug, Clone)]
pub struct UvAtlas {
    pub vertex_uv: Vec<[f64; 2]>,
    pub face_corner_uv: Vec<[[f64; 2]; 3]>,
    pub resolution: usize,
}

impl UvAtlas {
    /// Builds a seamless atlas straight from per-vertex UVs and a face list.
    pub fn from_vertex_uv(
        vertex_uv: Vec<[f64; 2]>,
        faces: &[[u32; 3]],
        resolution: usize,
    ) -> UvAtlas {
        let face_corner_uv = faces
            .iter()
            .map(|f| [vertex_uv[f[0] as usize], vertex_uv[f[1] as usize], vertex_uv[f[2] as usize]])
            .collect();
        UvAtlas {
            vertex_uv,
            face_corner_uv,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(invalid("atlas resolution must be positive"));
        }
        let in_unit = |p: &[f64; 2]| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
        if !self.vertex_uv.iter().all(in_unit) {
            return Err(invalid("vertex UV outside [0,1]"));
        }
        if !self.face_corner_uv.iter().flatten().all(in_unit) {
            return Err(invalid("face corner UV outside [0,1]"));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut c = Container::new("uv_atlas");
        c.metadata
            .insert("resolution".into(), self.resolution.to_string());
        let mut flat = Vec::with_capacity(self.vertex_uv.len() * 2);
        for p in &self.vertex_uv {
            flat.extend_from_slice(p);
        }
        c.put_f32("vertex_uv", &[self.vertex_uv.len(), 2], flat);
        let mut corners = Vec::with_capacity(self.face_corner_uv.len() * 6);
        for f in &self.face_corner_uv {
            for p in f {
                corners.extend_from_slice(p);
            }
        }
        c.put_f32(
            "face_corner_uv",
            &[self.face_corner_uv.len(), 3, 2],
            corners,
        );
        c.save(dir)
    }

    pub fn load(dir: &Path) -> Result<UvAtlas> {
        let c = Container::load(dir)?;
        if c.kind != "uv_atlas" {
            return Err(Error::ModelFormat(format!(
                "container kind `{}` is not a uv atlas",
                c.kind
            )));
        }
        let resolution = c
            .metadata
            .get("resolution")
            .and_then(|s| s.parse().ok())
            .unwrap_or(256);
        let (_, uv) = c.get_f32("vertex_uv")?;
        let vertex_uv = uv.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let (_, corners) = c.get_f32("face_corner_uv")?;
        let face_corner_uv = corners
            .chunks_exact(6)
            .map(|f| [[f[0], f[1]], [f[2], f[3]], [f[4], f[5]]])
            .collect();
        let atlas = UvAtlas {
            vertex_uv,
            face_corner_uv,
            resolution,
        };
        atlas.validate()?;
        Ok(atlas)
    }
}

/// Boolean occupancy raster: which texels lie inside the UV layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UvMask {
    pub resolution: usize,
    pub data: Vec<bool>,
}

impl UvMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.resolution + col]
    }
}

/// UV-space raster of canonical-space offsets, meters. Zero outside `mask`.
#[derive(Debug, Clone)]
pub struct DispMap {
    pub resolution: usize,
    /// R x R x 3, row-major.
    pub data: Vec<f64>,
    pub mask: UvMask,
}

impl DispMap {
    pub fn zero(resolution: usize, mask: UvMask) -> DispMap {
        assert_eq!(mask.resolution, resolution);
        DispMap {
            resolution,
            data: vec![0.0; resolution * resolution * 3],
            mask,
        }
    }

    pub fn texel(&self, row: usize, col: usize) -> Vec3 {
        let base = (row * self.resolution + col) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_texel(&mut self, row: usize, col: usize, v: Vec3) {
        let base = (row * self.resolution + col) * 3;
        self.data[base..base + 3].copy_from_slice(&v);
    }

    /// Max absolute value found outside the mask (0 for a well-formed map).
    pub fn off_mask_violation(&self) -> f64 {
        let r = self.resolution;
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                if !self.mask.get(i, j) {
                    let t = self.texel(i, j);
                    worst = worst.max(t[0].abs()).max(t[1].abs()).max(t[2].abs());
                }
            }
        }
        worst
    }
}

/// RGB albedo raster in [0,1].
#[derive(Debug, Clone)]
pub struct TextureMap {
    pub resolution: usize,
    /// R x R x 3, row-major.
    pub data: Vec<f64>,
}

impl TextureMap {
    pub fn constant(resolution: usize, rgb: [f64; 3]) -> TextureMap {
        let mut data = Vec::with_capacity(resolution * resolution * 3);
        for _ in 0..resolution * resolution {
            data.extend_from_slice(&rgb);
        }
        TextureMap { resolution, data }
    }

    pub fn texel(&self, row: usize, col: usize) -> Vec3 {
        let base = (row * self.resolution + col) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BakeStats {
    /// Texels written by more than one face (resolved last-writer-wins in
    /// face order).
    pub overlap_texels: usize,
    /// Zero-area UV triangles skipped.
    pub degenerate_faces: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStats {
    /// Vertex UVs clamped into [0,1].
    pub clamped: usize,
}

/// Edge function in raster coordinates (u right, v down).
#[inline]
fn edge(p0: [f64; 2], p1: [f64; 2], q: [f64; 2]) -> f64 {
    (p1[0] - p0[0]) * (q[1] - p0[1]) - (p1[1] - p0[1]) * (q[0] - p0[0])
}

/// Top-left inclusivity for an edge of a positively oriented triangle:
/// horizontal edges pointing right are "top", edges pointing up are "left".
#[inline]
fn edge_inclusive(p0: [f64; 2], p1: [f64; 2]) -> bool {
    let dx = p1[0] - p0[0];
    let dy = p1[1] - p0[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Iterates texel centers covered by a UV triangle, yielding
/// `(row, col, barycentric weights)`. Returns false when the triangle is
/// degenerate. Coverage uses the inclusive top-left rule so shared edges
/// belong to exactly one triangle.
fn rasterize_uv_triangle(
    corners: &[[f64; 2]; 3],
    resolution: usize,
    mut emit: impl FnMut(usize, usize, [f64; 3]),
) -> bool {
    let r = resolution as f64;
    // To raster coordinates: texel (i,j) center at (j+0.5, i+0.5).
    let mut p: [[f64; 2]; 3] = [
        [corners[0][0] * r, corners[0][1] * r],
        [corners[1][0] * r, corners[1][1] * r],
        [corners[2][0] * r, corners[2][1] * r],
    ];
    let mut area2 = edge(p[0], p[1], p[2]);
    if area2 == 0.0 {
        return false;
    }
    let swapped = area2 < 0.0;
    if swapped {
        p.swap(1, 2);
        area2 = -area2;
    }

    let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
    let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
    let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
    let col_lo = (min_x - 0.5).floor().max(0.0) as usize;
    let col_hi = ((max_x - 0.5).ceil().min(r - 1.0)) as isize;
    let row_lo = (min_y - 0.5).floor().max(0.0) as usize;
    let row_hi = ((max_y - 0.5).ceil().min(r - 1.0)) as isize;
    if col_hi < col_lo as isize || row_hi < row_lo as isize {
        return true;
    }

    let inc = [
        edge_inclusive(p[1], p[2]),
        edge_inclusive(p[2], p[0]),
        edge_inclusive(p[0], p[1]),
    ];
    for row in row_lo..=row_hi as usize {
        for col in col_lo..=col_hi as usize {
            let q = [col as f64 + 0.5, row as f64 + 0.5];
            let w0 = edge(p[1], p[2], q);
            let w1 = edge(p[2], p[0], q);
            let w2 = edge(p[0], p[1], q);
            let covered = (w0 > 0.0 || (w0 == 0.0 && inc[0]))
                && (w1 > 0.0 || (w1 == 0.0 && inc[1]))
                && (w2 > 0.0 || (w2 == 0.0 && inc[2]));
            if covered {
                let mut bary = [w0 / area2, w1 / area2, w2 / area2];
                if swapped {
                    bary.swap(1, 2);
                }
                emit(row, col, bary);
            }
        }
    }
    true
}

/// Rasterized footprint of the atlas triangles at texel centers.
pub fn build_mask(atlas: &UvAtlas, resolution: usize) -> Result<UvMask> {
    atlas.validate()?;
    let mut data = vec![false; resolution * resolution];
    let mut degenerate = 0usize;
    for corners in &atlas.face_corner_uv {
        let ok = rasterize_uv_triangle(corners, resolution, |row, col, _| {
            data[row * resolution + col] = true;
        });
        if !ok {
            degenerate += 1;
        }
    }
    if degenerate > 0 {
        eprintln!("build_mask: skipped {degenerate} degenerate UV triangles");
    }
    Ok(UvMask { resolution, data })
}

/// Bilinear sample of the displacement map at every vertex UV.
pub fn sample_dispmap_with_stats(map: &DispMap, atlas: &UvAtlas) -> Result<(Vec<Vec3>, SampleStats)> {
    atlas.validate()?;
    let r = map.resolution;
    if r == 0 {
        return Err(invalid("empty displacement map"));
    }
    let mut stats = SampleStats::default();
    let mut out = Vec::with_capacity(atlas.vertex_uv.len());
    for &[u, v] in &atlas.vertex_uv {
        let (mut uu, mut vv) = (u, v);
        if !(0.0..=1.0).contains(&uu) || !(0.0..=1.0).contains(&vv) {
            uu = uu.clamp(0.0, 1.0);
            vv = vv.clamp(0.0, 1.0);
            stats.clamped += 1;
        }
        out.push(bilinear(&map.data, r, uu, vv));
    }
    Ok((out, stats))
}

pub fn sample_dispmap(map: &DispMap, atlas: &UvAtlas) -> Result<Vec<Vec3>> {
    sample_dispmap_with_stats(map, atlas).map(|(v, _)| v)
}

/// Bilinear lookup in a R x R x 3 raster with clamped border taps.
pub(crate) fn bilinear(data: &[f64], resolution: usize, u: f64, v: f64) -> Vec3 {
    let r = resolution;
    let x = u * r as f64 - 0.5;
    let y = v * r as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clampi = |i: f64| (i.max(0.0) as usize).min(r - 1);
    let (c0, c1) = (clampi(x0), clampi(x0 + 1.0));
    let (r0, r1) = (clampi(y0), clampi(y0 + 1.0));
    let mut out = [0.0; 3];
    let taps = [
        (r0, c0, (1.0 - fx) * (1.0 - fy)),
        (r0, c1, fx * (1.0 - fy)),
        (r1, c0, (1.0 - fx) * fy),
        (r1, c1, fx * fy),
    ];
    for (row, col, w) in taps {
        let base = (row * r + col) * 3;
        out[0] += w * data[base];
        out[1] += w * data[base + 1];
        out[2] += w * data[base + 2];
    }
    out
}

/// Bakes per-vertex values into a displacement map: each UV triangle is
/// rasterized and filled with the barycentric interpolation of its corner
/// values; texels outside every triangle stay zero and masked out.
/// Overlapping triangles resolve last-writer-wins in face order.
pub fn bake_dispmap_with_stats(
    values: &[Vec3],
    faces: &[[u32; 3]],
    atlas: &UvAtlas,
    resolution: usize,
) -> Result<(DispMap, BakeStats)> {
    atlas.validate()?;
    if values.len() != atlas.vertex_uv.len() {
        return Err(shape_mismatch(
            "bake_dispmap values",
            &[values.len(), 3],
            &[atlas.vertex_uv.len(), 3],
        ));
    }
    if faces.len() != atlas.face_corner_uv.len() {
        return Err(shape_mismatch(
            "bake_dispmap faces",
            &[faces.len(), 3],
            &[atlas.face_corner_uv.len(), 3],
        ));
    }
    let mut stats = BakeStats::default();
    let mut data = vec![0.0; resolution * resolution * 3];
    let mut written = vec![false; resolution * resolution];
    let mut overlapped = vec![false; resolution * resolution];
    for (face, corners) in faces.iter().zip(&atlas.face_corner_uv) {
        let vals = [
            values[face[0] as usize],
            values[face[1] as usize],
            values[face[2] as usize],
        ];
        let ok = rasterize_uv_triangle(corners, resolution, |row, col, bary| {
            let idx = row * resolution + col;
            if written[idx] && !overlapped[idx] {
                overlapped[idx] = true;
                stats.overlap_texels += 1;
            }
            written[idx] = true;
            for c in 0..3 {
                data[idx * 3 + c] =
                    bary[0] * vals[0][c] + bary[1] * vals[1][c] + bary[2] * vals[2][c];
            }
        });
        if !ok {
            stats.degenerate_faces += 1;
        }
    }
    let mask = UvMask {
        resolution,
        data: written,
    };
    Ok((
        DispMap {
            resolution,
            data,
            mask,
        },
        stats,
    ))
}

pub fn bake_dispmap(
    values: &[Vec3],
    faces: &[[u32; 3]],
    atlas: &UvAtlas,
    resolution: usize,
) -> Result<DispMap> {
    bake_dispmap_with_stats(values, faces, atlas, resolution).map(|(m, _)| m)
}

/// Grows the map by one texel: every off-mask texel with at least one masked
/// 8-neighbor takes the mean of those neighbors and joins the mask. Useful at
/// high resolutions where bilinear taps straddle chart borders.
pub fn dilate_one_texel(map: &DispMap) -> DispMap {
    let r = map.resolution;
    let mut out = map.clone();
    for i in 0..r {
        for j in 0..r {
            if map.mask.get(i, j) {
                continue;
            }
            let mut acc = [0.0; 3];
            let mut count = 0usize;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= r as i64 || nj >= r as i64 {
                        continue;
                    }
                    if map.mask.get(ni as usize, nj as usize) {
                        let t = map.texel(ni as usize, nj as usize);
                        for c in 0..3 {
                            acc[c] += t[c];
                        }
                        count += 1;
                    }
                }
            }
            if count > 0 {
                out.set_texel(i, j, [
                    acc[0] / count as f64,
                    acc[1] / count as f64,
                    acc[2] / count as f64,
                ]);
                out.mask.data[i * r + j] = true;
            }
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct DispMapSidecar {
    scale: f64,
    offset: f64,
}

impl DispMap {
    /// Lossless raw container: `data` (R,R,3) f32 and `mask` (R,R) u32.
    pub fn save_f32(&self, dir: &Path) -> Result<()> {
        let r = self.resolution;
        let mut c = Container::new("dispmap");
        c.put_f32("data", &[r, r, 3], self.data.clone());
        c.put_u32(
            "mask",
            &[r, r],
            self.mask.data.iter().map(|&b| b as u32).collect(),
        );
        c.save(dir)
    }

    pub fn load_f32(dir: &Path) -> Result<DispMap> {
        let c = Container::load(dir)?;
        let (shape, data) = c.get_f32("data")?;
        if shape.len() != 3 || shape[0] != shape[1] || shape[2] != 3 {
            return Err(Error::ModelFormat("dispmap data must be R x R x 3".into()));
        }
        let r = shape[0];
        let (_, mask_data) = c.get_u32("mask")?;
        Ok(DispMap {
            resolution: r,
            data: data.to_vec(),
            mask: UvMask {
                resolution: r,
                data: mask_data.iter().map(|&v| v != 0).collect(),
            },
        })
    }

    /// Quantized 16-bit PNG plus `{scale, offset}` sidecar:
    /// `meters = png / 65535 * scale + offset`. The mask is written as an
    /// 8-bit `{0,255}` PNG next to it.
    pub fn save_png16(&self, png_path: &Path) -> Result<()> {
        let r = self.resolution;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..r {
            for j in 0..r {
                if self.mask.get(i, j) {
                    for c in self.texel(i, j) {
                        lo = lo.min(c);
                        hi = hi.max(c);
                    }
                }
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 0.0;
        }
        let scale = if hi > lo { hi - lo } else { 1.0 };
        let offset = lo;
        let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(r as u32, r as u32);
        for i in 0..r {
            for j in 0..r {
                let t = self.texel(i, j);
                let q = |v: f64| (((v - offset) / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
                img.put_pixel(j as u32, i as u32, image::Rgb([q(t[0]), q(t[1]), q(t[2])]));
            }
        }
        img.save(png_path)?;
        let sidecar = DispMapSidecar { scale, offset };
        std::fs::write(
            sidecar_path(png_path),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        let mut mask = image::GrayImage::new(r as u32, r as u32);
        for i in 0..r {
            for j in 0..r {
                mask.put_pixel(
                    j as u32,
                    i as u32,
                    image::Luma([if self.mask.get(i, j) { 255 } else { 0 }]),
                );
            }
        }
        mask.save(mask_path(png_path))?;
        Ok(())
    }

    pub fn load_png16(png_path: &Path) -> Result<DispMap> {
        let img = image::open(png_path)?.into_rgb16();
        let r = img.width() as usize;
        if img.height() as usize != r {
            return Err(Error::ModelFormat("dispmap png must be square".into()));
        }
        let text = std::fs::read_to_string(sidecar_path(png_path))?;
        let sidecar: DispMapSidecar = serde_json::from_str(&text)?;
        let mask_img = image::open(mask_path(png_path))?.into_luma8();
        let mut mask = vec![false; r * r];
        for i in 0..r {
            for j in 0..r {
                mask[i * r + j] = mask_img.get_pixel(j as u32, i as u32).0[0] >= 128;
            }
        }
        let mut data = vec![0.0; r * r * 3];
        for i in 0..r {
            for j in 0..r {
                if mask[i * r + j] {
                    let p = img.get_pixel(j as u32, i as u32).0;
                    for c in 0..3 {
                        data[(i * r + j) * 3 + c] =
                            p[c] as f64 / 65535.0 * sidecar.scale + sidecar.offset;
                    }
                }
            }
        }
        Ok(DispMap {
            resolution: r,
            data,
            mask: UvMask {
                resolution: r,
                data: mask,
            },
        })
    }
}

fn sidecar_path(png: &Path) -> std::path::PathBuf {
    png.with_extension("json")
}

fn mask_path(png: &Path) -> std::path::PathBuf {
    let stem = png.file_stem().unwrap_or_default().to_string_lossy();
    png.with_file_name(format!("{stem}_mask.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_atlas(resolution: usize) -> UvAtlas {
        // Two triangles tiling the unit square; 4 vertices.
        let vertex_uv = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let faces = [[0u32, 1, 2], [0, 2, 3]];
        UvAtlas::from_vertex_uv(vertex_uv, &faces, resolution)
    }

    #[test]
    fn mask_of_half_square_triangle_matches_point_oracle() {
        // Lower-left triangle of the unit square.
        let atlas = UvAtlas {
            vertex_uv: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            face_corner_uv: vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]],
            resolution: 64,
        };
        let r = 64;
        let mask = build_mask(&atlas, r).unwrap();
        // Oracle: brute-force point-in-triangle on texel centers.
        let mut expected = 0usize;
        for i in 0..r {
            for j in 0..r {
                let u = (j as f64 + 0.5) / r as f64;
                let v = (i as f64 + 0.5) / r as f64;
                let inside = u >= 0.0 && v >= 0.0 && u + v < 1.0;
                if inside {
                    expected += 1;
                    assert!(mask.get(i, j), "texel ({i},{j}) should be covered");
                }
            }
        }
        assert_eq!(mask.count(), expected);
        // And roughly half the square.
        let frac = mask.count() as f64 / (r * r) as f64;
        assert!((frac - 0.5).abs() < 0.02, "coverage fraction {frac}");
    }

    #[test]
    fn empty_atlas_mask_is_all_false() {
        let atlas = UvAtlas {
            vertex_uv: vec![],
            face_corner_uv: vec![],
            resolution: 16,
        };
        let mask = build_mask(&atlas, 16).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn mask_is_deterministic() {
        let atlas = square_atlas(32);
        let a = build_mask(&atlas, 32).unwrap();
        let b = build_mask(&atlas, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shared_edge_belongs_to_exactly_one_triangle() {
        // The two square triangles share the diagonal; every texel must be
        // covered exactly once when baking face ids.
        let atlas = square_atlas(32);
        let values = vec![[1.0, 0.0, 0.0]; 4];
        let (_, stats) =
            bake_dispmap_with_stats(&values, &[[0, 1, 2], [0, 2, 3]], &atlas, 32).unwrap();
        assert_eq!(stats.overlap_texels, 0);
        let mask = build_mask(&atlas, 32).unwrap();
        assert_eq!(mask.count(), 32 * 32);
    }

    #[test]
    fn sample_constant_map_returns_constant() {
        let atlas = square_atlas(16);
        let mask = build_mask(&atlas, 16).unwrap();
        let mut map = DispMap::zero(16, mask);
        for i in 0..16 {
            for j in 0..16 {
                map.set_texel(i, j, [0.25, -0.5, 1.5]);
            }
        }
        let got = sample_dispmap(&map, &atlas).unwrap();
        for v in got {
            assert!((v[0] - 0.25).abs() < 1e-12);
            assert!((v[1] + 0.5).abs() < 1e-12);
            assert!((v[2] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_at_texel_center_and_midpoint() {
        let r = 8;
        let mask = UvMask {
            resolution: r,
            data: vec![true; r * r],
        };
        let mut map = DispMap::zero(r, mask);
        map.set_texel(3, 2, [1.0, 2.0, 3.0]);
        map.set_texel(3, 3, [3.0, 6.0, 9.0]);
        let center = |row: usize, col: usize| {
            [
                (col as f64 + 0.5) / r as f64,
                (row as f64 + 0.5) / r as f64,
            ]
        };
        let atlas = UvAtlas {
            vertex_uv: vec![
                center(3, 2),
                [(2.0 + 0.5) / r as f64 + 0.5 / r as f64, (3.0 + 0.5) / r as f64],
            ],
            face_corner_uv: vec![],
            resolution: r,
        };
        let got = sample_dispmap(&map, &atlas).unwrap();
        // Exactly at texel center: exact texel value.
        assert_eq!(got[0], [1.0, 2.0, 3.0]);
        // Midway between two centers: arithmetic mean.
        assert!((got[1][0] - 2.0).abs() < 1e-12);
        assert!((got[1][1] - 4.0).abs() < 1e-12);
        assert!((got[1][2] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bake_uniform_value_masks_and_fills() {
        let atlas = square_atlas(32);
        let values = vec![[0.5, 0.25, -0.125]; 4];
        let (map, stats) =
            bake_dispmap_with_stats(&values, &[[0, 1, 2], [0, 2, 3]], &atlas, 32).unwrap();
        assert_eq!(stats.degenerate_faces, 0);
        let mask = build_mask(&atlas, 32).unwrap();
        assert_eq!(map.mask, mask);
        for i in 0..32 {
            for j in 0..32 {
                if map.mask.get(i, j) {
                    let t = map.texel(i, j);
                    assert!((t[0] - 0.5).abs() < 1e-12);
                } else {
                    assert_eq!(map.texel(i, j), [0.0; 3]);
                }
            }
        }
        assert_eq!(map.off_mask_violation(), 0.0);
    }

    #[test]
    fn bake_then_sample_exact_for_affine_fields() {
        // Field linear in (u,v): barycentric fill makes every texel exact, so
        // bilinear recovery is exact wherever all four taps are masked.
        let atlas = square_atlas(64);
        let field = |u: f64, v: f64| [0.2 + 0.3 * u - 0.1 * v, u + v, -0.5 * u];
        let values: Vec<Vec3> = atlas.vertex_uv.iter().map(|&[u, v]| field(u, v)).collect();
        let map = bake_dispmap(&values, &[[0, 1, 2], [0, 2, 3]], &atlas, 64).unwrap();
        // Probe interior points via a synthetic atlas.
        let probe = UvAtlas {
            vertex_uv: vec![[0.3, 0.4], [0.7, 0.2], [0.5, 0.9]],
            face_corner_uv: vec![],
            resolution: 64,
        };
        let got = sample_dispmap(&map, &probe).unwrap();
        for (&[u, v], g) in probe.vertex_uv.iter().zip(&got) {
            let want = field(u, v);
            for c in 0..3 {
                assert!((g[c] - want[c]).abs() < 1e-9, "{g:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn dilation_extends_mask_by_ring() {
        let atlas = UvAtlas {
            vertex_uv: vec![[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]],
            face_corner_uv: vec![[[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]]],
            resolution: 32,
        };
        let values = vec![[1.0, 1.0, 1.0]; 3];
        let map = bake_dispmap(&values, &[[0, 1, 2]], &atlas, 32).unwrap();
        let grown = dilate_one_texel(&map);
        assert!(grown.mask.count() > map.mask.count());
        assert_eq!(grown.off_mask_violation(), 0.0);
        // Dilated ring takes neighbor means: all ones here.
        for i in 0..32 {
            for j in 0..32 {
                if grown.mask.get(i, j) && !map.mask.get(i, j) {
                    assert!((grown.texel(i, j)[0] - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dispmap_png16_roundtrip() {
        let atlas = square_atlas(16);
        let values = vec![
            [0.01, -0.02, 0.0],
            [0.03, 0.0, -0.01],
            [0.0, 0.02, 0.015],
            [-0.005, 0.01, 0.0],
        ];
        let map = bake_dispmap(&values, &[[0, 1, 2], [0, 2, 3]], &atlas, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("d.png");
        map.save_png16(&png).unwrap();
        let back = DispMap::load_png16(&png).unwrap();
        assert_eq!(back.mask, map.mask);
        let quantum = 0.05 / 65535.0; // range is ~0.05 m here
        for (a, b) in back.data.iter().zip(&map.data) {
            assert!((a - b).abs() < quantum * 2.0);
        }
        assert_eq!(back.off_mask_violation(), 0.0);
    }

    #[test]
    fn dispmap_f32_roundtrip() {
        let atlas = square_atlas(8);
        let values = vec![[0.5, 0.0, 0.0]; 4];
        let map = bake_dispmap(&values, &[[0, 1, 2], [0, 2, 3]], &atlas, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        map.save_f32(dir.path()).unwrap();
        let back = DispMap::load_f32(dir.path()).unwrap();
        assert_eq!(back.mask, map.mask);
        assert_eq!(back.data, map.data);
    }
}
