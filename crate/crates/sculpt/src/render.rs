//! Software rasterizer for textured meshes, differentiable with respect to
//! texture texels.
//!
//! Geometry is frozen wherever gradients are needed (the texture training
//! stage), so the renderer only has to expose the linear map from texture
//! texels to pixels: each covered pixel records its four bilinear taps and
//! weights, and [`texture_backward`] is the exact adjoint of that map.
//! Rasterization is a plain z-buffer with the top-left fill rule and
//! perspective-correct barycentrics over per-corner UVs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body::ClothedMesh;
use crate::error::{invalid, Result};
use crate::math::{mat3_mul_vec, Mat3, Vec3, IDENTITY3};
use crate::uv::{TextureMap, UvAtlas};

/// Pinhole camera. Right-handed: the camera looks down -z in camera space
/// with y up; `extrinsic` maps world to camera as `p_cam = R p + t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub principal: [f64; 2],
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Frontal catalog-style framing: a body of height ~1.8 m centered at
    /// `center`, viewed from `distance` meters along +z, filling ~90% of the
    /// image height. `yaw` rotates the viewpoint around the vertical axis.
    pub fn frontal(width: usize, height: usize, center: Vec3, distance: f64, yaw: f64) -> Camera {
        let focal = height as f64 / 2.0 / (0.9_f64 * 1.8 / 2.0 / distance);
        let (s, c) = yaw.sin_cos();
        let rotation = [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]];
        // Position the camera at center + R^T (0,0,distance) so it looks at
        // the center from the yawed direction: t = (0,0,-distance) - R c.
        let rc = mat3_mul_vec(&rotation, center);
        let translation = [-rc[0], -rc[1], -rc[2] - distance];
        Camera {
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            rotation,
            translation,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.focal <= 0.0 {
            return Err(invalid("camera focal length must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("camera image size must be positive"));
        }
        Ok(())
    }

    fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = mat3_mul_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal: 160.0,
            principal: [64.0, 64.0],
            rotation: IDENTITY3,
            translation: [0.0, 0.0, 0.0],
            width: 128,
            height: 128,
        }
    }
}

/// One bilinear tap: flat texel index (row-major over R x R) and weight.
pub type TexTap = (u32, f64);

/// Rendered image plus the per-pixel tap records needed for texture
/// gradients.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// H x W x 3 in [0,1] (row-major).
    pub rgb: Vec<f64>,
    /// H x W coverage; pixels with `false` hold the background color.
    pub alpha: Vec<bool>,
    /// Texture resolution the taps index into.
    pub texture_resolution: usize,
    /// Four taps per covered pixel, empty slots for background pixels.
    pub texgrad_tape: Vec<[TexTap; 4]>,
}

impl RenderOutput {
    pub fn pixel(&self, row: usize, col: usize) -> Vec3 {
        let base = (row * self.width + col) * 3;
        [self.rgb[base], self.rgb[base + 1], self.rgb[base + 2]]
    }

    pub fn coverage(&self) -> usize {
        self.alpha.iter().filter(|&&a| a).count()
    }

    /// Mean color over covered pixels; background mean when nothing is
    /// covered.
    pub fn mean_foreground(&self) -> Vec3 {
        let mut acc = [0.0; 3];
        let mut count = 0usize;
        for (i, &a) in self.alpha.iter().enumerate() {
            if a {
                for c in 0..3 {
                    acc[c] += self.rgb[i * 3 + c];
                }
                count += 1;
            }
        }
        if count == 0 {
            return acc;
        }
        [
            acc[0] / count as f64,
            acc[1] / count as f64,
            acc[2] / count as f64,
        ]
    }
}

#[inline]
fn edge(p0: [f64; 2], p1: [f64; 2], q: [f64; 2]) -> f64 {
    (p1[0] - p0[0]) * (q[1] - p0[1]) - (p1[1] - p0[1]) * (q[0] - p0[0])
}

#[inline]
fn edge_inclusive(p0: [f64; 2], p1: [f64; 2]) -> bool {
    let dx = p1[0] - p0[0];
    let dy = p1[1] - p0[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

const NEAR_PLANE: f64 = 1e-4;

/// Renders `mesh` with `texture` through `camera` over a constant
/// background. Triangles with any vertex behind the near plane are skipped
/// (scenes here never straddle the camera). Depth ties keep the
/// earliest face, so output is independent of any internal scheduling.
pub fn render(
    mesh: &ClothedMesh,
    atlas: &UvAtlas,
    texture: &TextureMap,
    camera: &Camera,
    background_rgb: Vec3,
) -> Result<RenderOutput> {
    camera.validate()?;
    if texture.resolution == 0 {
        return Err(invalid("texture resolution must be positive"));
    }
    if !mesh.vertices.iter().flatten().all(|v| v.is_finite()) {
        return Err(invalid("mesh contains non-finite vertices"));
    }
    if atlas.face_corner_uv.len() != mesh.faces.len() {
        return Err(invalid("atlas face count differs from mesh"));
    }

    let (w, h) = (camera.width, camera.height);
    let mut rgb = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h {
        rgb.extend_from_slice(&background_rgb);
    }
    let mut alpha = vec![false; w * h];
    let mut depth_buf = vec![f64::INFINITY; w * h];
    let mut tape: Vec<[TexTap; 4]> = vec![[(0, 0.0); 4]; w * h];

    // Project all vertices once. depth = distance along the viewing axis
    // (positive in front of the camera).
    let projected: Vec<([f64; 2], f64)> = mesh
        .vertices
        .iter()
        .map(|&v| {
            let c = camera.to_camera(v);
            let depth = -c[2];
            if depth <= NEAR_PLANE {
                ([f64::NAN, f64::NAN], depth)
            } else {
                (
                    [
                        camera.principal[0] + camera.focal * c[0] / depth,
                        camera.principal[1] - camera.focal * c[1] / depth,
                    ],
                    depth,
                )
            }
        })
        .collect();

    for (fi, face) in mesh.faces.iter().enumerate() {
        let (mut p, mut z) = ([[0.0; 2]; 3], [0.0; 3]);
        let mut skip = false;
        for (k, &vi) in face.iter().enumerate() {
            let (sp, depth) = projected[vi as usize];
            if depth <= NEAR_PLANE {
                skip = true;
                break;
            }
            p[k] = sp;
            z[k] = depth;
        }
        if skip {
            continue;
        }
        let corner_uv = atlas.face_corner_uv[fi];

        let mut area2 = edge(p[0], p[1], p[2]);
        if area2 == 0.0 {
            continue;
        }
        // Orient consistently so the edge functions are positive inside;
        // no backface culling, both windings draw.
        let mut order = [0usize, 1, 2];
        if area2 < 0.0 {
            order = [0, 2, 1];
            area2 = -area2;
        }
        let (pa, pb, pc) = (p[order[0]], p[order[1]], p[order[2]]);
        let inc = [
            edge_inclusive(pb, pc),
            edge_inclusive(pc, pa),
            edge_inclusive(pa, pb),
        ];

        let min_x = pa[0].min(pb[0]).min(pc[0]);
        let max_x = pa[0].max(pb[0]).max(pc[0]);
        let min_y = pa[1].min(pb[1]).min(pc[1]);
        let max_y = pa[1].max(pb[1]).max(pc[1]);
        if max_x < 0.0 || max_y < 0.0 || min_x >= w as f64 || min_y >= h as f64 {
            continue;
        }
        let col_lo = (min_x - 0.5).floor().max(0.0) as usize;
        let col_hi = ((max_x - 0.5).ceil()).min(w as f64 - 1.0) as usize;
        let row_lo = (min_y - 0.5).floor().max(0.0) as usize;
        let row_hi = ((max_y - 0.5).ceil()).min(h as f64 - 1.0) as usize;

        let inv_z = [
            1.0 / z[order[0]],
            1.0 / z[order[1]],
            1.0 / z[order[2]],
        ];
        let uv = [
            corner_uv[order[0]],
            corner_uv[order[1]],
            corner_uv[order[2]],
        ];

        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let q = [col as f64 + 0.5, row as f64 + 0.5];
                let w0 = edge(pb, pc, q);
                let w1 = edge(pc, pa, q);
                let w2 = edge(pa, pb, q);
                let covered = (w0 > 0.0 || (w0 == 0.0 && inc[0]))
                    && (w1 > 0.0 || (w1 == 0.0 && inc[1]))
                    && (w2 > 0.0 || (w2 == 0.0 && inc[2]));
                if !covered {
                    continue;
                }
                let l = [w0 / area2, w1 / area2, w2 / area2];
                // Perspective-correct interpolation via 1/z weighting.
                let zinv = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
                let depth = 1.0 / zinv;
                let idx = row * w + col;
                if depth < depth_buf[idx] {
                    depth_buf[idx] = depth;
                    let pu =
                        (l[0] * uv[0][0] * inv_z[0] + l[1] * uv[1][0] * inv_z[1] + l[2] * uv[2][0] * inv_z[2])
                            * depth;
                    let pv =
                        (l[0] * uv[0][1] * inv_z[0] + l[1] * uv[1][1] * inv_z[1] + l[2] * uv[2][1] * inv_z[2])
                            * depth;
                    let (color, taps) = sample_texture(texture, pu, pv);
                    rgb[idx * 3..idx * 3 + 3].copy_from_slice(&color);
                    alpha[idx] = true;
                    tape[idx] = taps;
                }
            }
        }
    }

    Ok(RenderOutput {
        width: w,
        height: h,
        rgb,
        alpha,
        texture_resolution: texture.resolution,
        texgrad_tape: tape,
    })
}

/// Bilinear texture lookup returning the color and the four taps
/// (flat texel index, weight); weights always sum to 1.
fn sample_texture(texture: &TextureMap, u: f64, v: f64) -> (Vec3, [TexTap; 4]) {
    let r = texture.resolution;
    let x = u.clamp(0.0, 1.0) * r as f64 - 0.5;
    let y = v.clamp(0.0, 1.0) * r as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clampi = |i: f64| (i.max(0.0) as usize).min(r - 1);
    let (c0, c1) = (clampi(x0), clampi(x0 + 1.0));
    let (r0, r1) = (clampi(y0), clampi(y0 + 1.0));
    let taps = [
        ((r0 * r + c0) as u32, (1.0 - fx) * (1.0 - fy)),
        ((r0 * r + c1) as u32, fx * (1.0 - fy)),
        ((r1 * r + c0) as u32, (1.0 - fx) * fy),
        ((r1 * r + c1) as u32, fx * fy),
    ];
    let mut color = [0.0; 3];
    for (t, wgt) in taps {
        let base = t as usize * 3;
        for c in 0..3 {
            color[c] += wgt * texture.data[base + c];
        }
    }
    (color, taps)
}

/// Adjoint of the texture-to-pixel map: scatters per-pixel gradients back to
/// texels with the recorded tap weights. `output_grad` is H x W x 3
/// row-major; the result has the texture's R x R x 3 layout.
pub fn texture_backward(output_grad: &[f64], output: &RenderOutput) -> Result<Vec<f64>> {
    let expected = output.width * output.height * 3;
    if output_grad.len() != expected {
        return Err(crate::error::shape_mismatch(
            "texture_backward grad",
            &[output_grad.len()],
            &[expected],
        ));
    }
    let r = output.texture_resolution;
    let mut grad = vec![0.0; r * r * 3];
    for (idx, &a) in output.alpha.iter().enumerate() {
        if !a {
            continue;
        }
        for (t, wgt) in output.texgrad_tape[idx] {
            let base = t as usize * 3;
            for c in 0..3 {
                grad[base + c] += wgt * output_grad[idx * 3 + c];
            }
        }
    }
    Ok(grad)
}

/// Patch placement report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    /// Top-left (row, col) per patch.
    pub origins: Vec<(usize, usize)>,
    pub patch_size: usize,
    /// Extraction fell back to uniform placement because nothing in the
    /// image had >= 50% foreground overlap.
    pub fallback_uniform: bool,
}

/// Draws `count` patch origins uniformly from the positions whose patch
/// window overlaps the foreground by at least 50%. Deterministic given the
/// RNG state. Falls back to uniform placement over the whole image (flagged)
/// when no position qualifies.
pub fn choose_patch_origins(
    alpha: &[bool],
    width: usize,
    height: usize,
    count: usize,
    patch_size: usize,
    rng: &mut impl Rng,
) -> Result<PatchSet> {
    if patch_size == 0 || patch_size > width.min(height) {
        return Err(invalid(format!(
            "patch size {patch_size} does not fit a {width}x{height} image"
        )));
    }
    // Integral image over alpha for O(1) window sums.
    let mut integral = vec![0u32; (width + 1) * (height + 1)];
    for row in 0..height {
        for col in 0..width {
            integral[(row + 1) * (width + 1) + col + 1] = alpha[row * width + col] as u32
                + integral[row * (width + 1) + col + 1]
                + integral[(row + 1) * (width + 1) + col]
                - integral[row * (width + 1) + col];
        }
    }
    let window = |row: usize, col: usize| {
        integral[(row + patch_size) * (width + 1) + col + patch_size]
            + integral[row * (width + 1) + col]
            - integral[row * (width + 1) + col + patch_size]
            - integral[(row + patch_size) * (width + 1) + col]
    };
    let threshold = (patch_size * patch_size) as u32 / 2;
    let mut valid = Vec::new();
    for row in 0..=height - patch_size {
        for col in 0..=width - patch_size {
            if window(row, col) >= threshold {
                valid.push((row, col));
            }
        }
    }
    let fallback = valid.is_empty();
    let origins = (0..count)
        .map(|_| {
            if fallback {
                (
                    rng.gen_range(0..=height - patch_size),
                    rng.gen_range(0..=width - patch_size),
                )
            } else {
                valid[rng.gen_range(0..valid.len())]
            }
        })
        .collect();
    Ok(PatchSet {
        origins,
        patch_size,
        fallback_uniform: fallback,
    })
}

/// Extracts the pixel blocks for a patch set; output is
/// `count x patch_size x patch_size x 3`.
pub fn extract_patches(
    rgb: &[f64],
    width: usize,
    patches: &PatchSet,
) -> Vec<Vec<f64>> {
    let ps = patches.patch_size;
    patches
        .origins
        .iter()
        .map(|&(row, col)| {
            let mut out = Vec::with_capacity(ps * ps * 3);
            for dr in 0..ps {
                let base = ((row + dr) * width + col) * 3;
                out.extend_from_slice(&rgb[base..base + ps * 3]);
            }
            out
        })
        .collect()
}

/// Scatters patch gradients back into an image gradient (the adjoint of
/// [`extract_patches`]); overlapping patches accumulate.
pub fn scatter_patch_grads(
    patch_grads: &[Vec<f64>],
    patches: &PatchSet,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let ps = patches.patch_size;
    let mut out = vec![0.0; width * height * 3];
    for (grad, &(row, col)) in patch_grads.iter().zip(&patches.origins) {
        for dr in 0..ps {
            let img_base = ((row + dr) * width + col) * 3;
            let patch_base = dr * ps * 3;
            for k in 0..ps * 3 {
                out[img_base + k] += grad[patch_base + k];
            }
        }
    }
    out
}
