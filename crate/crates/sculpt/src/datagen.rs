//! Deterministic synthetic assets: the toy body and the synthetic training
//! datasets, so every pipeline stage is testable without licensed body
//! models or scraped image data.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::body::{lbs, shaped_template, BodyModel, BodyShape, Pose, ROOT_SENTINEL};
use crate::dataset::{GeometryDataset, GeometryRecord, TextureDataset, TextureRecord};
use crate::error::Result;
use crate::labeler::{
    build_color_prompt, encode_clothing_type, lexicon_rgb, mock_text_encoder, ClothingType,
};
use crate::math::Vec3;
use crate::render::{render, Camera};
use crate::uv::{bake_dispmap, TextureMap, UvAtlas};

const SEGMENTS: usize = 12;
const RINGS: usize = 16;
const Y_BOTTOM: f64 = 0.12;
const Y_TOP: f64 = 1.72;
const MAX_RADIUS: f64 = 0.16;

/// Heights of the three toy joints: root (pelvis), hip, shoulder.
pub const TOY_JOINT_HEIGHTS: [f64; 3] = [0.95, 0.45, 1.40];

fn ring_height(ring: usize) -> f64 {
    // Ring 0 at the top so the v coordinate grows downward with the row index.
    Y_TOP - (Y_TOP - Y_BOTTOM) * ring as f64 / (RINGS - 1) as f64
}

fn ring_radius(ring: usize) -> f64 {
    let t = ring as f64 / (RINGS - 1) as f64; // 0 at top, 1 at bottom
    let s = 2.0 * t - 1.0;
    MAX_RADIUS * (1.0 - s.powi(4)).max(0.015).sqrt()
}

fn ring_v(ring: usize) -> f64 {
    0.03 + 0.94 * ring as f64 / (RINGS - 1) as f64
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Procedural capsule body: `SEGMENTS x RINGS` tube vertices plus two pole
/// caps, three joints in a star (root -> hip, root -> shoulder), smooth skin
/// weights, two shape directions (height, girth) and a small smooth
/// pose-corrective basis. Fully closed-form, so repeated calls are
/// hash-stable.
pub fn make_toy_body() -> (BodyModel, UvAtlas) {
    let n = SEGMENTS * RINGS + 2;
    let mut vertices = Vec::with_capacity(n);
    let mut vertex_uv = Vec::with_capacity(n);
    for ring in 0..RINGS {
        let y = ring_height(ring);
        let r = ring_radius(ring);
        for seg in 0..SEGMENTS {
            let phi = 2.0 * std::f64::consts::PI * seg as f64 / SEGMENTS as f64;
            vertices.push([r * phi.cos(), y, r * phi.sin()]);
            vertex_uv.push([seg as f64 / SEGMENTS as f64, ring_v(ring)]);
        }
    }
    let top_pole = vertices.len();
    vertices.push([0.0, Y_TOP + 0.04, 0.0]);
    vertex_uv.push([0.5, 0.01]);
    let bottom_pole = vertices.len();
    vertices.push([0.0, Y_BOTTOM - 0.04, 0.0]);
    vertex_uv.push([0.5, 0.99]);

    // Tube faces plus pole fans. Seam faces wrap in u; their corner UVs on
    // the wrapped column use u = 1.0 so both sides of the seam bake.
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut face_corner_uv: Vec<[[f64; 2]; 3]> = Vec::new();
    let vid = |ring: usize, seg: usize| (ring * SEGMENTS + seg % SEGMENTS) as u32;
    let uv_of = |ring: usize, seg: usize| {
        // seg may equal SEGMENTS for the wrapped corner.
        [seg as f64 / SEGMENTS as f64, ring_v(ring)]
    };
    for ring in 0..RINGS - 1 {
        for seg in 0..SEGMENTS {
            let (a, b) = (vid(ring, seg), vid(ring, seg + 1));
            let (c, d) = (vid(ring + 1, seg), vid(ring + 1, seg + 1));
            faces.push([a, b, d]);
            face_corner_uv.push([uv_of(ring, seg), uv_of(ring, seg + 1), uv_of(ring + 1, seg + 1)]);
            faces.push([a, d, c]);
            face_corner_uv.push([uv_of(ring, seg), uv_of(ring + 1, seg + 1), uv_of(ring + 1, seg)]);
        }
    }
    for seg in 0..SEGMENTS {
        faces.push([top_pole as u32, vid(0, seg + 1), vid(0, seg)]);
        face_corner_uv.push([[0.5, 0.01], uv_of(0, seg + 1), uv_of(0, seg)]);
        faces.push([bottom_pole as u32, vid(RINGS - 1, seg), vid(RINGS - 1, seg + 1)]);
        face_corner_uv.push([
            [0.5, 0.99],
            uv_of(RINGS - 1, seg),
            uv_of(RINGS - 1, seg + 1),
        ]);
    }

    // Skin weights: smooth ramps from the root to the hip below and the
    // shoulder above, disjoint in height so rows sum to one by construction.
    let k = 3;
    let mut skin_weights = vec![0.0; n * k];
    for (v, pos) in vertices.iter().enumerate() {
        let y = pos[1];
        let w_hip = smoothstep((0.75 - y) / 0.35);
        let w_shoulder = smoothstep((y - 1.15) / 0.35);
        let w_root = 1.0 - w_hip - w_shoulder;
        skin_weights[v * k] = w_root;
        skin_weights[v * k + 1] = w_hip;
        skin_weights[v * k + 2] = w_shoulder;
    }

    // Joint regressor: Gaussian weights over vertex heights around each
    // joint height, normalized per joint.
    let mut joint_regressor = vec![0.0; k * n];
    for (j, &yj) in TOY_JOINT_HEIGHTS.iter().enumerate() {
        let mut sum = 0.0;
        for (v, pos) in vertices.iter().enumerate() {
            let w = (-(pos[1] - yj).powi(2) / (2.0 * 0.08f64.powi(2))).exp();
            joint_regressor[j * n + v] = w;
            sum += w;
        }
        for v in 0..n {
            joint_regressor[j * n + v] /= sum;
        }
    }

    // Shape basis: direction 0 scales height about the mid-line, direction 1
    // inflates girth radially.
    let s = 2;
    let y_mid = 0.5 * (Y_TOP + Y_BOTTOM);
    let mut shape_dirs = vec![0.0; n * 3 * s];
    for (v, pos) in vertices.iter().enumerate() {
        shape_dirs[(v * 3 + 1) * s] = (pos[1] - y_mid) * 0.10;
        let radial = (pos[0] * pos[0] + pos[2] * pos[2]).sqrt();
        if radial > 1e-9 {
            shape_dirs[(v * 3) * s + 1] = pos[0] / radial * 0.03;
            shape_dirs[(v * 3 + 2) * s + 1] = pos[2] / radial * 0.03;
        }
    }

    // Pose-corrective basis: small smooth radial bulges keyed to the pose
    // feature index; closed-form and millimeter-scale.
    let feat = 9 * (k - 1);
    let mut pose_dirs = vec![0.0; n * 3 * feat];
    for (v, pos) in vertices.iter().enumerate() {
        let radial = (pos[0] * pos[0] + pos[2] * pos[2]).sqrt();
        if radial <= 1e-9 {
            continue;
        }
        let (nx, nz) = (pos[0] / radial, pos[2] / radial);
        for f in 0..feat {
            let amp = 0.003 * (3.0 * pos[1] + f as f64).sin();
            pose_dirs[(v * 3) * feat + f] = amp * nx;
            pose_dirs[(v * 3 + 2) * feat + f] = amp * nz;
        }
    }

    let model = BodyModel {
        template_vertices: vertices,
        faces,
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skin_weights,
        parents: vec![ROOT_SENTINEL, 0, 0],
        vertex_uv: vertex_uv.clone(),
    };
    debug_assert!(model.validate().is_ok());
    let atlas = UvAtlas {
        vertex_uv,
        face_corner_uv,
        resolution: 256,
    };
    (model, atlas)
}

/// Fixed bank of plausible toy poses (small joint bends), used everywhere a
/// dataset needs "randomly sampled poses" with a reproducible source.
pub fn toy_pose_bank(count: usize, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut body_pose = vec![0.0; 6];
            for v in body_pose.iter_mut() {
                *v = rng.gen_range(-0.35..0.35);
            }
            Pose {
                body_pose,
                root_orient: [0.0, rng.gen_range(-0.3..0.3), 0.0],
            }
        })
        .collect()
}

/// Pads a toy pose (6 values) into the fixed 69-dim conditioning vector.
pub fn pose_condition_vector(pose: &Pose) -> Vec<f64> {
    let mut out = vec![0.0; 69];
    for (i, &v) in pose.body_pose.iter().enumerate().take(69) {
        out[i] = v;
    }
    out
}

/// Upper-body / lower-body vertex masks of the toy body, used to paint
/// region-constant clothing. Returns (upper, lower) weights in [0,1] per
/// vertex with smooth boundaries.
pub fn toy_clothing_regions(model: &BodyModel) -> (Vec<f64>, Vec<f64>) {
    let upper: Vec<f64> = model
        .template_vertices
        .iter()
        .map(|p| smoothstep((p[1] - 0.96) / 0.08) * smoothstep((1.58 - p[1]) / 0.08))
        .collect();
    let lower: Vec<f64> = model
        .template_vertices
        .iter()
        .map(|p| smoothstep((0.92 - p[1]) / 0.08) * smoothstep((p[1] - 0.25) / 0.08))
        .collect();
    (upper, lower)
}

/// Analytic clothing bump field for a clothing type: radial inflation over
/// the garment's coverage, longer garments covering more of the body.
/// `strength` scales the bump amplitude in meters.
pub fn clothing_bump_field(
    model: &BodyModel,
    clothing: crate::labeler::ClothingType,
    strength: f64,
) -> Vec<Vec3> {
    let (upper_len, lower_len) = (
        if clothing.long_sleeves() { 0.50 } else { 0.28 },
        if clothing.long_trousers() { 0.62 } else { 0.30 },
    );
    model
        .template_vertices
        .iter()
        .map(|p| {
            let y = p[1];
            let radial = (p[0] * p[0] + p[2] * p[2]).sqrt();
            if radial < 1e-9 {
                return [0.0; 3];
            }
            // Upper garment hangs from the shoulders down; lower garment
            // rises from the hips down. Smooth ends keep the field
            // band-limited for bake/sample round trips.
            let upper_top = 1.58;
            let upper = smoothstep((upper_top - y) / 0.10)
                * smoothstep((y - (upper_top - upper_len)) / 0.10);
            let lower_top = 0.92;
            let lower = smoothstep((lower_top - y) / 0.10)
                * smoothstep((y - (lower_top - lower_len)) / 0.10);
            let amp = strength * (upper + 0.8 * lower);
            [amp * p[0] / radial, 0.0, amp * p[2] / radial]
        })
        .collect()
}

/// A smooth sinusoidal offset field used by round-trip tests; varies mostly
/// along the body axis and vanishes at the poles.
pub fn sinusoidal_offsets(model: &BodyModel, amplitude: f64) -> Vec<Vec3> {
    model
        .template_vertices
        .iter()
        .map(|p| {
            let radial = (p[0] * p[0] + p[2] * p[2]).sqrt();
            if radial < 1e-9 {
                return [0.0; 3];
            }
            let envelope = smoothstep((p[1] - Y_BOTTOM) / 0.15) * smoothstep((Y_TOP - p[1]) / 0.15);
            let wave = (5.0 * p[1]).sin() * 0.6 + 0.4 * (2.5 * p[1] + 1.0).cos();
            let amp = amplitude * envelope * wave;
            [amp * p[0] / radial, amplitude * 0.2 * envelope * (4.0 * p[1]).cos(), amp * p[2] / radial]
        })
        .collect()
}

/// Saves the toy body and atlas as a body-model container.
pub fn save_toy_body(dir: &Path) -> Result<()> {
    let (model, _) = make_toy_body();
    model.save(dir)
}

/// Per-vertex Gaussian noise scaled along the radial direction, seeded per
/// sample so datasets regenerate byte-identically.
fn radial_noise(model: &BodyModel, rng: &mut ChaCha8Rng, sigma: f64) -> Vec<Vec3> {
    model
        .template_vertices
        .iter()
        .map(|p| {
            let n: f64 = StandardNormal.sample(rng);
            let radial = (p[0] * p[0] + p[2] * p[2]).sqrt();
            if radial < 1e-9 {
                [0.0; 3]
            } else {
                [
                    sigma * n * p[0] / radial,
                    0.0,
                    sigma * n * p[2] / radial,
                ]
            }
        })
        .collect()
}

/// Bump amplitude of the synthetic clothing, meters.
pub const SYNTH_BUMP_STRENGTH: f64 = 0.04;
/// Noise sigma of the synthetic clothing, meters.
pub const SYNTH_NOISE_SIGMA: f64 = 0.003;

/// Generates `count` synthetic displacement maps across `modes` clothing
/// types: each sample is the mode's analytic bump field plus small seeded
/// noise, baked at `resolution`, paired with a pose drawn from the fixed
/// pose bank.
pub fn synth_geometry_dataset(
    model: &BodyModel,
    atlas: &UvAtlas,
    out_dir: &Path,
    count: usize,
    modes: usize,
    resolution: usize,
    seed: u64,
) -> Result<GeometryDataset> {
    if count == 0 || modes == 0 || modes > 6 {
        return Err(crate::error::invalid(
            "synth_geometry_dataset needs count >= 1 and 1 <= modes <= 6",
        ));
    }
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose_bank = toy_pose_bank(64, seed ^ 0x706f7365);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mode = rng.gen_range(0..modes);
        let clothing = ClothingType::from_code(mode)?;
        let bumps = clothing_bump_field(model, clothing, SYNTH_BUMP_STRENGTH);
        let noise = radial_noise(model, &mut rng, SYNTH_NOISE_SIGMA);
        let offsets: Vec<Vec3> = bumps
            .iter()
            .zip(&noise)
            .map(|(b, n)| [b[0] + n[0], b[1] + n[1], b[2] + n[2]])
            .collect();
        let map = bake_dispmap(&offsets, &model.faces, atlas, resolution)?;
        let pose = pose_bank[rng.gen_range(0..pose_bank.len())].clone();
        let rel = format!("sample_{i:05}_disp");
        map.save_f32(&out_dir.join(&rel))?;
        records.push(GeometryRecord {
            dispmap: rel,
            theta: pose.body_pose.clone(),
            root_orient: pose.root_orient.to_vec(),
            betas: vec![0.0; model.shape_count()],
            c_g: mode,
        });
    }
    let dataset = GeometryDataset {
        root: out_dir.to_path_buf(),
        records,
    };
    dataset.save()?;
    Ok(dataset)
}

/// Per-vertex colors for region-constant clothing over a skin tone.
pub fn paint_vertex_colors(
    model: &BodyModel,
    upper_rgb: [f64; 3],
    lower_rgb: [f64; 3],
) -> Vec<Vec3> {
    const SKIN: [f64; 3] = [0.78, 0.62, 0.52];
    let (upper_w, lower_w) = toy_clothing_regions(model);
    model
        .template_vertices
        .iter()
        .enumerate()
        .map(|(v, _)| {
            let (uw, lw) = (upper_w[v], lower_w[v]);
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = SKIN[k] + uw * (upper_rgb[k] - SKIN[k]) + lw * (lower_rgb[k] - SKIN[k]);
            }
            c
        })
        .collect()
}

/// Bakes per-vertex colors into a texture map; texels outside the UV
/// coverage take the first vertex color so off-chart bilinear taps stay
/// plausible.
pub fn bake_texture(
    model: &BodyModel,
    atlas: &UvAtlas,
    vertex_colors: &[Vec3],
    resolution: usize,
) -> Result<TextureMap> {
    let map = bake_dispmap(vertex_colors, &model.faces, atlas, resolution)?;
    let fill = vertex_colors.first().copied().unwrap_or([0.5; 3]);
    let mut data = map.data;
    for i in 0..resolution * resolution {
        if !map.mask.data[i] {
            data[i * 3..i * 3 + 3].copy_from_slice(&fill);
        }
    }
    Ok(TextureMap {
        resolution,
        data: data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    })
}

/// Default catalog-style camera for the toy body.
pub fn toy_camera(image_size: usize) -> Camera {
    Camera::frontal(image_size, image_size, [0.0, 0.92, 0.0], 2.5, 0.0)
}

/// Renders `count` region-painted bodies: per sample a palette pair of
/// upper/lower colors, a pose from the bank and a clothing-type label; the
/// record carries the mock-encoded color prompt. Images are PNG with an
/// alpha sidecar.
#[allow(clippy::too_many_arguments)]
pub fn synth_texture_dataset(
    model: &BodyModel,
    atlas: &UvAtlas,
    out_dir: &Path,
    count: usize,
    palette: &[String],
    image_size: usize,
    texture_resolution: usize,
    seed: u64,
) -> Result<TextureDataset> {
    if palette.is_empty() {
        return Err(crate::error::invalid("palette must be nonempty"));
    }
    if count == 0 {
        return Err(crate::error::invalid("count must be >= 1"));
    }
    for color in palette {
        if lexicon_rgb(color).is_none() {
            return Err(crate::error::invalid(format!(
                "color `{color}` is not in the built-in lexicon"
            )));
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose_bank = toy_pose_bank(64, seed ^ 0x706f7365);
    let camera = toy_camera(image_size);
    let shape = BodyShape::neutral(model.shape_count());
    let shaped = shaped_template(model, &shape)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let upper = &palette[rng.gen_range(0..palette.len())];
        let lower = &palette[rng.gen_range(0..palette.len())];
        let clothing = rng.gen_range(0..6usize);
        let pose = pose_bank[rng.gen_range(0..pose_bank.len())].clone();

        let colors = paint_vertex_colors(
            model,
            lexicon_rgb(upper).unwrap(),
            lexicon_rgb(lower).unwrap(),
        );
        let texture = bake_texture(model, atlas, &colors, texture_resolution)?;
        let mesh = lbs(model, &shaped, &shape, &pose)?;
        let out = render(&mesh, atlas, &texture, &camera, [1.0, 1.0, 1.0])?;

        let rel = format!("sample_{i:05}.png");
        crate::imageio::save_render(&out_dir.join(&rel), &out)?;

        let prompt = build_color_prompt(upper, lower)?;
        records.push(TextureRecord {
            image: rel,
            c_g: clothing,
            c_t: mock_text_encoder(&prompt.prompt),
            theta: pose.body_pose.clone(),
            root_orient: pose.root_orient.to_vec(),
        });
        let _ = encode_clothing_type(ClothingType::from_code(clothing)?);
    }
    let dataset = TextureDataset {
        root: out_dir.to_path_buf(),
        records,
    };
    dataset.save()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{joint_locations, lbs, shaped_template, BodyShape};
    use crate::uv::{bake_dispmap, build_mask, sample_dispmap};

    #[test]
    fn toy_body_is_valid_and_deterministic() {
        let (a, atlas_a) = make_toy_body();
        let (b, atlas_b) = make_toy_body();
        a.validate().unwrap();
        atlas_a.validate().unwrap();
        assert_eq!(a.template_vertices, b.template_vertices);
        assert_eq!(a.skin_weights, b.skin_weights);
        assert_eq!(atlas_a.vertex_uv, atlas_b.vertex_uv);
        assert!(a.vertex_count() >= 190 && a.vertex_count() <= 210);
        assert_eq!(a.joint_count(), 3);
    }

    #[test]
    fn toy_weights_rows_sum_to_one() {
        let (model, _) = make_toy_body();
        let k = model.joint_count();
        for v in 0..model.vertex_count() {
            let sum: f64 = model.skin_weights[v * k..(v + 1) * k].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_rest_pose_lbs_is_identity() {
        let (model, _) = make_toy_body();
        let shape = BodyShape::neutral(2);
        let pose = Pose::rest(2);
        let mesh = lbs(&model, &model.template_vertices, &shape, &pose).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in mesh.vertices.iter().zip(&model.template_vertices) {
            for i in 0..3 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < 1e-9, "rest-pose deviation {worst}");
    }

    #[test]
    fn toy_joints_near_expected_heights() {
        let (model, _) = make_toy_body();
        let shaped = shaped_template(&model, &BodyShape::neutral(2)).unwrap();
        let joints = joint_locations(&model, &shaped);
        for (j, &yj) in TOY_JOINT_HEIGHTS.iter().enumerate() {
            assert!((joints[j][1] - yj).abs() < 0.08, "joint {j} at {:?}", joints[j]);
            assert!(joints[j][0].abs() < 1e-9);
            assert!(joints[j][2].abs() < 1e-9);
        }
    }

    #[test]
    fn toy_atlas_covers_and_roundtrips() {
        let (model, atlas) = make_toy_body();
        let mask = build_mask(&atlas, 256).unwrap();
        // Most of the unit square is the tube chart.
        assert!(mask.count() > 200 * 256);

        let offsets = sinusoidal_offsets(&model, 0.02);
        let map = bake_dispmap(&offsets, &model.faces, &atlas, 256).unwrap();
        let recovered = sample_dispmap(&map, &atlas).unwrap();
        let mut worst: f64 = 0.0;
        for (a, b) in recovered.iter().zip(&offsets) {
            for i in 0..3 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < 1e-3, "bake/sample round trip error {worst}");
    }

    #[test]
    fn synth_geometry_dataset_modes_and_determinism() {
        let (model, atlas) = make_toy_body();
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_geometry_dataset(&model, &atlas, dir.path(), 10, 2, 32, 5).unwrap();
        assert_eq!(ds.records.len(), 10);
        assert!(ds.records.iter().all(|r| r.c_g < 2));
        assert!(ds.records.iter().any(|r| r.c_g == 0));
        assert!(ds.records.iter().any(|r| r.c_g == 1));
        let report = crate::dataset::validate_dataset(dir.path()).unwrap();
        assert!(report.ok(), "problems: {:?}", report.problems);

        // Per-mode mean map is close to the analytic bump field.
        for mode in 0..2 {
            let maps: Vec<_> = ds
                .records
                .iter()
                .filter(|r| r.c_g == mode)
                .map(|r| ds.load_dispmap(r).unwrap())
                .collect();
            let bumps = clothing_bump_field(
                &model,
                crate::labeler::ClothingType::from_code(mode).unwrap(),
                SYNTH_BUMP_STRENGTH,
            );
            let analytic = bake_dispmap(&bumps, &model.faces, &atlas, 32).unwrap();
            let n = maps.len() as f64;
            let mut worst: f64 = 0.0;
            for t in 0..32 * 32 * 3 {
                let mean: f64 = maps.iter().map(|m| m.data[t]).sum::<f64>() / n;
                worst = worst.max((mean - analytic.data[t]).abs());
            }
            // Mean of N noisy maps: sigma/sqrt(N) per texel, loose bound.
            assert!(worst < 4.0 * SYNTH_NOISE_SIGMA, "mode {mode} mean err {worst}");
        }

        // Byte-identical regeneration.
        let dir2 = tempfile::tempdir().unwrap();
        let ds2 = synth_geometry_dataset(&model, &atlas, dir2.path(), 10, 2, 32, 5).unwrap();
        for (a, b) in ds.records.iter().zip(&ds2.records) {
            assert_eq!(a.theta, b.theta);
            assert_eq!(a.c_g, b.c_g);
            let ma = ds.load_dispmap(a).unwrap();
            let mb = ds2.load_dispmap(b).unwrap();
            assert_eq!(ma.data, mb.data);
        }
    }

    #[test]
    fn synth_texture_dataset_constant_color_foreground() {
        let (model, atlas) = make_toy_body();
        let dir = tempfile::tempdir().unwrap();
        let palette = vec!["blue".to_string()];
        let ds =
            synth_texture_dataset(&model, &atlas, dir.path(), 4, &palette, 48, 64, 11).unwrap();
        assert_eq!(ds.records.len(), 4);
        let report = crate::dataset::validate_dataset(dir.path()).unwrap();
        assert!(report.ok(), "problems: {:?}", report.problems);

        // With a single palette color the garment covers most of the body;
        // foreground mean should land near a blue-skin blend, strongly blue.
        let (rgb, w, h) = crate::imageio::load_rgb(&dir.path().join(&ds.records[0].image)).unwrap();
        let (alpha, ..) =
            crate::imageio::load_alpha(&crate::imageio::alpha_sidecar_path(
                &dir.path().join(&ds.records[0].image),
            ))
            .unwrap();
        let mut mean = [0.0; 3];
        let mut count = 0;
        for i in 0..w * h {
            if alpha[i] {
                for c in 0..3 {
                    mean[c] += rgb[i * 3 + c];
                }
                count += 1;
            }
        }
        assert!(count > 0);
        for c in mean.iter_mut() {
            *c /= count as f64;
        }
        assert!(mean[2] > mean[0], "foreground should lean blue: {mean:?}");

        // Determinism by bytes.
        let dir2 = tempfile::tempdir().unwrap();
        synth_texture_dataset(&model, &atlas, dir2.path(), 4, &palette, 48, 64, 11).unwrap();
        let a = std::fs::read(dir.path().join("sample_00000.png")).unwrap();
        let b = std::fs::read(dir2.path().join("sample_00000.png")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pose_bank_is_seeded_and_padded() {
        let a = toy_pose_bank(5, 7);
        let b = toy_pose_bank(5, 7);
        assert_eq!(a, b);
        let cond = pose_condition_vector(&a[0]);
        assert_eq!(cond.len(), 69);
        assert_eq!(&cond[..6], a[0].body_pose.as_slice());
        assert!(cond[6..].iter().all(|&v| v == 0.0));
    }
}
