//! Two-stage adversarial training.
//!
//! Stage 1 trains the geometry generator against a global conditional
//! discriminator on displacement-map data. Stage 2 freezes the geometry
//! network and trains the texture generator on rendered images against a
//! global and a patch discriminator; gradients reach the texture network
//! through the renderer's texture adjoint only.
//!
//! Everything is driven by one seeded RNG in a fixed draw order, so a rerun
//! with the same config reproduces the loss log bitwise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, ParamStore, Tape, TensorId};
use crate::body::{pose_clothed_body, BodyModel, BodyShape, Pose};
use crate::dataset::{GeometryDataset, TextureDataset};
use crate::datagen::pose_condition_vector;
use crate::error::{invalid, Error, Result};
use crate::imageio;
use crate::labeler::CLOTHING_TYPE_COUNT;
use crate::nets::{
    bind, Bound, Discriminator, DiscriminatorConfig, GeneratorConfig, GeometryGenerator,
    TextureGenerator, rows_tensor, LATENT_DIM, POSE_COND_DIM,
};
use crate::render::{
    choose_patch_origins, extract_patches, render, scatter_patch_grads, texture_backward, Camera,
};
use crate::uv::{DispMap, UvAtlas, UvMask};

/// Patch size used at full scale when a config does not say otherwise.
pub const DEFAULT_PATCH_SIZE: usize = 64;

/// Run configuration for both training stages (stage-specific fields are
/// ignored by the other stage).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: GeneratorConfig,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub r1_gamma: f64,
    /// Meters per normalized displacement unit.
    pub disp_scale: f64,
    /// Render size for the texture stage.
    pub image_size: usize,
    pub patch_size: usize,
    /// Patches drawn per image.
    pub patch_count: usize,
    pub use_global_disc: bool,
    pub use_patch_disc: bool,
    /// Texture-generator coupling gates start at 1 when true, frozen at 0
    /// when false (the no-geometry-conditioning baseline).
    pub coupling: bool,
    /// Horizontal-flip augmentation of real samples (off by default).
    pub flip_augment: bool,
    pub log_every: usize,
    pub metric_every: usize,
    /// Extra checkpoint cadence; 0 saves only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: GeneratorConfig::desk(),
            seed: 0,
            steps: 2000,
            batch_size: 8,
            lr: 0.001,
            r1_gamma: 1.0,
            disp_scale: 0.05,
            image_size: 32,
            patch_size: 16,
            patch_count: 4,
            use_global_disc: true,
            use_patch_disc: true,
            coupling: true,
            flip_augment: false,
            log_every: 1,
            metric_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::IoPath {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Generator loss: `mean softplus(-D(fake))`.
pub fn nonsat_g_loss(tape: &mut Tape, fake_logits: TensorId) -> TensorId {
    let neg = tape.scale(fake_logits, -1.0);
    let sp = tape.softplus(neg);
    tape.mean(sp)
}

/// Discriminator loss: `mean softplus(-D(real)) + mean softplus(D(fake))`.
pub fn nonsat_d_loss(
    tape: &mut Tape,
    real_logits: TensorId,
    fake_logits: TensorId,
) -> Result<TensorId> {
    let neg_real = tape.scale(real_logits, -1.0);
    let sp_real = tape.softplus(neg_real);
    let real_term = tape.mean(sp_real);
    let sp_fake = tape.softplus(fake_logits);
    let fake_term = tape.mean(sp_fake);
    tape.add(real_term, fake_term)
}

/// R1 penalty from already-computed real logits:
/// `(gamma/2) * mean_b ||d sum(logits) / d real_input||^2`, built with
/// `create_graph` so its own gradient flows to the discriminator weights.
pub fn r1_penalty_from_logits(
    tape: &mut Tape,
    real_logits: TensorId,
    real_input: TensorId,
    gamma: f64,
) -> Result<TensorId> {
    let batch = tape.shape(real_input)[0].max(1);
    let s = tape.sum(real_logits);
    let gx = tape.grad(s, &[real_input], true)?[0];
    let sq = tape.mul(gx, gx)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, gamma / (2.0 * batch as f64)))
}

/// R1 penalty around a caller-supplied forward (the op-level entry point).
pub fn r1_penalty<F>(
    tape: &mut Tape,
    real_batch: &[f64],
    input_shape: &[usize],
    gamma: f64,
    d_forward: F,
) -> Result<TensorId>
where
    F: FnOnce(&mut Tape, TensorId) -> Result<TensorId>,
{
    let x = tape.leaf(input_shape, real_batch.to_vec());
    let logits = d_forward(tape, x)?;
    r1_penalty_from_logits(tape, logits, x, gamma)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub csv_path: String,
    pub checkpoint_dir: String,
    pub mask_violations: u64,
    pub final_d_loss: f64,
    pub final_g_loss: f64,
    pub adam_skipped: u64,
}

struct MetricsLog {
    rows: Vec<String>,
    last_pixel_fd: Option<f64>,
}

impl MetricsLog {
    fn new() -> MetricsLog {
        MetricsLog {
            rows: vec!["step,d_loss,g_loss,r1,pixel_fd,mask_violations".into()],
            last_pixel_fd: None,
        }
    }

    fn push(&mut self, step: usize, d: f64, g: f64, r1: f64, mask_violations: u64) {
        let fd = self
            .last_pixel_fd
            .map(|v| v.to_string())
            .unwrap_or_default();
        self.rows
            .push(format!("{step},{d},{g},{r1},{fd},{mask_violations}"));
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.rows.join("\n") + "\n")?;
        Ok(())
    }
}

#[derive(Default)]
struct Latest {
    d: f64,
    g: f64,
    r1: f64,
}

fn randn_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn one_hot(code: usize) -> Vec<f64> {
    let mut v = vec![0.0; CLOTHING_TYPE_COUNT];
    v[code] = 1.0;
    v
}

/// Mean over 2x2 ... blocks down to an 8x8x3 summary vector.
fn downsample_8x8(data: &[f64], resolution: usize) -> Vec<f64> {
    let block = resolution / 8;
    let mut out = vec![0.0; 8 * 8 * 3];
    for by in 0..8 {
        for bx in 0..8 {
            let mut acc = [0.0; 3];
            for dy in 0..block {
                for dx in 0..block {
                    let idx = ((by * block + dy) * resolution + bx * block + dx) * 3;
                    for c in 0..3 {
                        acc[c] += data[idx + c];
                    }
                }
            }
            for c in 0..3 {
                out[(by * 8 + bx) * 3 + c] = acc[c] / (block * block) as f64;
            }
        }
    }
    out
}

/// Jacobi eigendecomposition of a symmetric matrix (row-major `n x n`).
fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..30 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| m[i * n + i]).collect();
    (eigvals, v)
}

/// Frechet distance between Gaussian fits of two sample sets (rows are
/// samples). A crude convergence proxy, not comparable to any deep-feature
/// metric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let stats = |rows: &[Vec<f64>]| {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (r[j] - mean[j]) / (n - 1.0).max(1.0);
                }
            }
        }
        (mean, cov)
    };
    let (mu_a, cov_a) = stats(a);
    let (mu_b, cov_b) = stats(b);

    let mean_term: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    // tr(Ca + Cb - 2 (Ca^{1/2} Cb Ca^{1/2})^{1/2}) via two symmetric
    // eigendecompositions.
    let (vals_a, vecs_a) = sym_eigen(&cov_a, d);
    let sqrt_vals: Vec<f64> = vals_a.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // S = Va diag(sqrt) Va^T
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += vecs_a[i * d + k] * sqrt_vals[k] * vecs_a[j * d + k];
            }
            s[i * d + j] = acc;
        }
    }
    // M = S Cb S
    let mut tmp = vec![0.0; d * d];
    crate::autodiff::gemm_nn(d, d, d, &s, &cov_b, &mut tmp);
    let mut mprod = vec![0.0; d * d];
    crate::autodiff::gemm_nn(d, d, d, &tmp, &s, &mut mprod);
    // Symmetrize against roundoff before the eigensolve.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (mprod[i * d + j] + mprod[j * d + i]);
            mprod[i * d + j] = avg;
            mprod[j * d + i] = avg;
        }
    }
    let (vals_m, _) = sym_eigen(&mprod, d);
    let tr_sqrt: f64 = vals_m.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let tr_a: f64 = (0..d).map(|i| cov_a[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| cov_b[i * d + i]).sum();
    (mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0)
}

fn flip_raster(data: &[f64], resolution: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for row in 0..resolution {
        for col in 0..resolution {
            let src = (row * resolution + col) * 3;
            let dst = (row * resolution + (resolution - 1 - col)) * 3;
            out[dst..dst + 3].copy_from_slice(&data[src..src + 3]);
        }
    }
    out
}

/// Preloaded geometry training data: normalized channels-last rasters plus
/// condition vectors.
struct GeoData {
    maps: Vec<Vec<f64>>,
    conds: Vec<Vec<f64>>,
    thetas: Vec<Vec<f64>>,
}

fn load_geo_data(dataset: &GeometryDataset, cfg: &TrainConfig) -> Result<GeoData> {
    if dataset.records.is_empty() {
        return Err(invalid("geometry dataset is empty"));
    }
    let r = cfg.net.resolution;
    let mut maps = Vec::with_capacity(dataset.records.len());
    let mut conds = Vec::with_capacity(dataset.records.len());
    let mut thetas = Vec::with_capacity(dataset.records.len());
    for record in &dataset.records {
        let map = dataset.load_dispmap(record)?;
        if map.resolution != r {
            return Err(invalid(format!(
                "dispmap resolution {} does not match config {}",
                map.resolution, r
            )));
        }
        maps.push(map.data.iter().map(|v| v / cfg.disp_scale).collect());
        let pose = Pose {
            body_pose: record.theta.clone(),
            root_orient: [0.0; 3],
        };
        let theta = pose_condition_vector(&pose);
        let mut cond = one_hot(record.c_g);
        cond.extend_from_slice(&theta);
        conds.push(cond);
        thetas.push(theta);
    }
    Ok(GeoData {
        maps,
        conds,
        thetas,
    })
}

/// Counts nonzero off-mask texels in a batch of generated maps.
fn mask_violations(batch: &[f64], resolution: usize, mask: &UvMask) -> u64 {
    let per_sample = resolution * resolution * 3;
    let mut count = 0;
    for sample in batch.chunks(per_sample) {
        for i in 0..resolution {
            for j in 0..resolution {
                if !mask.get(i, j) {
                    let base = (i * resolution + j) * 3;
                    if sample[base] != 0.0 || sample[base + 1] != 0.0 || sample[base + 2] != 0.0 {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Stage 1: trains the geometry generator and its discriminator. Returns
/// the report; writes `metrics.csv`, `checkpoint/` (generator) and
/// `checkpoint_disc/` under `out_dir`.
pub fn train_geometry(
    cfg: &TrainConfig,
    dataset: &GeometryDataset,
    mask: &UvMask,
    out_dir: &Path,
) -> Result<TrainReport> {
    fs::create_dir_all(out_dir)?;
    let data = load_geo_data(dataset, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = GeometryGenerator::new(cfg.net.clone(), cfg.seed ^ 0x67656f)?;
    let mut disc = Discriminator::new(
        DiscriminatorConfig::new(cfg.net.resolution, CLOTHING_TYPE_COUNT + POSE_COND_DIM),
        cfg.seed ^ 0x64697363,
    )?;
    let mut g_state = AdamState::new(&generator.params.sizes());
    let mut d_state = AdamState::new(&disc.params.sizes());
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let r = cfg.net.resolution;
    let b = cfg.batch_size;
    let mut log = MetricsLog::new();
    let mut total_mask_violations = 0u64;
    let mut latest = Latest::default();

    // Sample a fake bundle: latents, uniform clothing codes, dataset poses.
    let sample_bundle = |rng: &mut ChaCha8Rng| {
        let z = randn_rows(rng, b, LATENT_DIM);
        let codes: Vec<usize> = (0..b).map(|_| rng.gen_range(0..CLOTHING_TYPE_COUNT)).collect();
        let thetas: Vec<Vec<f64>> = (0..b)
            .map(|_| data.thetas[rng.gen_range(0..data.thetas.len())].clone())
            .collect();
        let conds: Vec<Vec<f64>> = codes
            .iter()
            .zip(&thetas)
            .map(|(&c, t)| {
                let mut v = one_hot(c);
                v.extend_from_slice(t);
                v
            })
            .collect();
        (z, codes, thetas, conds)
    };

    for step in 0..cfg.steps {
        // ---- Discriminator update.
        let mut tape = Tape::new();
        let (z, codes, thetas, fake_conds) = sample_bundle(&mut rng);
        let g_bound = bind(&generator.params, &mut tape, false);
        let zt = rows_tensor(&mut tape, &z, false)?;
        let cg = rows_tensor(&mut tape, &codes.iter().map(|&c| one_hot(c)).collect::<Vec<_>>(), false)?;
        let th = rows_tensor(&mut tape, &thetas, false)?;
        let (fake_t, _) = generator.forward(&mut tape, &g_bound, zt, cg, th, mask)?;
        total_mask_violations += mask_violations(tape.value(fake_t), r, mask);

        let real_rows: Vec<usize> = (0..b).map(|_| rng.gen_range(0..data.maps.len())).collect();
        let mut real_data = Vec::with_capacity(b * r * r * 3);
        let mut real_conds = Vec::with_capacity(b);
        for &row in &real_rows {
            let flip = cfg.flip_augment && rng.gen_bool(0.5);
            if flip {
                real_data.extend(flip_raster(&data.maps[row], r));
            } else {
                real_data.extend_from_slice(&data.maps[row]);
            }
            real_conds.push(data.conds[row].clone());
        }
        let real_leaf = tape.leaf(&[b, r, r, 3], real_data);
        let d_bound = bind(&disc.params, &mut tape, true);
        let real_cond_t = rows_tensor(&mut tape, &real_conds, false)?;
        let fake_cond_t = rows_tensor(&mut tape, &fake_conds, false)?;
        let real_logits = disc.forward(&mut tape, &d_bound, real_leaf, real_cond_t)?;
        let fake_logits = disc.forward(&mut tape, &d_bound, fake_t, fake_cond_t)?;
        let d_main = nonsat_d_loss(&mut tape, real_logits, fake_logits)?;
        let r1 = r1_penalty_from_logits(&mut tape, real_logits, real_leaf, cfg.r1_gamma)?;
        let d_total = tape.add(d_main, r1)?;
        let d_grads = tape.grad(d_total, &d_bound.ids, false)?;
        let grad_slices: Vec<&[f64]> = d_grads.iter().map(|&g| tape.value(g)).collect();
        latest.d = tape.scalar(d_main);
        latest.r1 = tape.scalar(r1);
        adam_step(&mut disc.params.values, &grad_slices, &mut d_state, &adam)?;
        drop(tape);

        // ---- Generator update.
        let mut tape = Tape::new();
        let (z, codes, thetas, fake_conds) = sample_bundle(&mut rng);
        let g_bound = bind(&generator.params, &mut tape, true);
        let zt = rows_tensor(&mut tape, &z, false)?;
        let cg = rows_tensor(&mut tape, &codes.iter().map(|&c| one_hot(c)).collect::<Vec<_>>(), false)?;
        let th = rows_tensor(&mut tape, &thetas, false)?;
        let (fake_t, _) = generator.forward(&mut tape, &g_bound, zt, cg, th, mask)?;
        total_mask_violations += mask_violations(tape.value(fake_t), r, mask);
        let d_bound = bind(&disc.params, &mut tape, false);
        let fake_cond_t = rows_tensor(&mut tape, &fake_conds, false)?;
        let fake_logits = disc.forward(&mut tape, &d_bound, fake_t, fake_cond_t)?;
        let g_loss = nonsat_g_loss(&mut tape, fake_logits);
        let g_grads = tape.grad(g_loss, &g_bound.ids, false)?;
        let grad_slices: Vec<&[f64]> = g_grads.iter().map(|&g| tape.value(g)).collect();
        latest.g = tape.scalar(g_loss);
        adam_step(&mut generator.params.values, &grad_slices, &mut g_state, &adam)?;
        drop(tape);

        // ---- Metrics.
        if cfg.metric_every > 0 && (step + 1) % cfg.metric_every == 0 {
            let m = 32.min(data.maps.len()).max(2);
            let reals: Vec<Vec<f64>> = (0..m)
                .map(|_| downsample_8x8(&data.maps[rng.gen_range(0..data.maps.len())], r))
                .collect();
            let mut tape = Tape::new();
            let (z, codes, thetas, _) = sample_bundle(&mut rng);
            let g_bound = bind(&generator.params, &mut tape, false);
            let zt = rows_tensor(&mut tape, &z[..m.min(b)].to_vec(), false)?;
            let cg = rows_tensor(
                &mut tape,
                &codes[..m.min(b)].iter().map(|&c| one_hot(c)).collect::<Vec<_>>(),
                false,
            )?;
            let th = rows_tensor(&mut tape, &thetas[..m.min(b)].to_vec(), false)?;
            let (fake_t, _) = generator.forward(&mut tape, &g_bound, zt, cg, th, mask)?;
            let per = r * r * 3;
            let fakes: Vec<Vec<f64>> = tape
                .value(fake_t)
                .chunks(per)
                .map(|s| downsample_8x8(s, r))
                .collect();
            log.last_pixel_fd = Some(frechet_distance(&reals, &fakes));
        }
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log.push(step, latest.d, latest.g, latest.r1, total_mask_violations);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            generator.params.save_checkpoint(
                &out_dir.join(format!("checkpoint_step{:06}", step + 1)),
                Some(&g_state),
                &metadata(cfg, "geometry")?,
            )?;
        }
    }

    let csv_path = out_dir.join("metrics.csv");
    log.write(&csv_path)?;
    let ckpt = out_dir.join("checkpoint");
    generator
        .params
        .save_checkpoint(&ckpt, Some(&g_state), &metadata(cfg, "geometry")?)?;
    disc.params.save_checkpoint(
        &out_dir.join("checkpoint_disc"),
        Some(&d_state),
        &metadata(cfg, "geometry_disc")?,
    )?;
    Ok(TrainReport {
        steps: cfg.steps,
        csv_path: csv_path.to_string_lossy().into_owned(),
        checkpoint_dir: ckpt.to_string_lossy().into_owned(),
        mask_violations: total_mask_violations,
        final_d_loss: latest.d,
        final_g_loss: latest.g,
        adam_skipped: g_state.skipped + d_state.skipped,
    })
}

fn metadata(cfg: &TrainConfig, role: &str) -> Result<Vec<(String, String)>> {
    Ok(vec![
        ("role".into(), role.into()),
        ("config".into(), serde_json::to_string(cfg)?),
    ])
}

/// Everything stage 2 needs beyond the config: the frozen geometry
/// generator, body/atlas assets and the camera.
pub struct TextureStage<'a> {
    pub geometry: &'a GeometryGenerator,
    pub model: &'a BodyModel,
    pub atlas: &'a UvAtlas,
    pub mask: &'a UvMask,
    pub camera: &'a Camera,
}

struct TexData {
    images: Vec<Vec<f64>>,
    alphas: Vec<Vec<bool>>,
    conds: Vec<Vec<f64>>,
    color_embeds: Vec<Vec<f64>>,
    poses: Vec<Pose>,
    codes: Vec<usize>,
}

fn load_tex_data(dataset: &TextureDataset, cfg: &TrainConfig) -> Result<TexData> {
    if dataset.records.is_empty() {
        return Err(invalid("texture dataset is empty"));
    }
    let s = cfg.image_size;
    let mut images = Vec::new();
    let mut alphas = Vec::new();
    let mut conds = Vec::new();
    let mut color_embeds = Vec::new();
    let mut poses = Vec::new();
    let mut codes = Vec::new();
    for record in &dataset.records {
        let path = dataset.root.join(&record.image);
        let (rgb, w, h) = imageio::load_rgb(&path)?;
        if w != s || h != s {
            return Err(invalid(format!(
                "image {} is {w}x{h}, config wants {s}x{s}",
                record.image
            )));
        }
        let alpha_path = imageio::alpha_sidecar_path(&path);
        let alpha = if alpha_path.exists() {
            imageio::load_alpha(&alpha_path)?.0
        } else {
            // Fall back to "anything not pure white is foreground".
            rgb.chunks(3).map(|p| p.iter().any(|&v| v < 0.999)).collect()
        };
        let mut cond = one_hot(record.c_g);
        cond.extend_from_slice(&record.c_t);
        conds.push(cond);
        color_embeds.push(record.c_t.clone());
        poses.push(Pose {
            body_pose: record.theta.clone(),
            root_orient: match record.root_orient.as_slice() {
                [x, y, z] => [*x, *y, *z],
                _ => [0.0; 3],
            },
        });
        codes.push(record.c_g);
        images.push(rgb);
        alphas.push(alpha);
    }
    Ok(TexData {
        images,
        alphas,
        conds,
        color_embeds,
        poses,
        codes,
    })
}

/// Renders one generated sample: normalized displacement values to meters,
/// mesh via the body model, textured render through the fixed camera.
fn render_fake(
    stage: &TextureStage,
    cfg: &TrainConfig,
    disp_norm: &[f64],
    texture: &[f64],
    pose: &Pose,
) -> Result<crate::render::RenderOutput> {
    let r = cfg.net.resolution;
    let map = DispMap {
        resolution: r,
        data: disp_norm.iter().map(|v| v * cfg.disp_scale).collect(),
        mask: stage.mask.clone(),
    };
    let shape = BodyShape::neutral(stage.model.shape_count());
    let mesh = pose_clothed_body(stage.model, &shape, pose, &map, stage.atlas)?;
    let tex = crate::uv::TextureMap {
        resolution: r,
        data: texture.to_vec(),
    };
    render(&mesh, stage.atlas, &tex, stage.camera, [1.0, 1.0, 1.0])
}

/// Stage 2: freezes the geometry generator and trains the texture generator
/// against rendered fakes with global and/or patch discriminators.
pub fn train_texture(
    cfg: &TrainConfig,
    stage: &TextureStage,
    dataset: &TextureDataset,
    out_dir: &Path,
) -> Result<TrainReport> {
    if !cfg.use_global_disc && !cfg.use_patch_disc {
        return Err(invalid("at least one discriminator must be enabled"));
    }
    fs::create_dir_all(out_dir)?;
    let data = load_tex_data(dataset, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let geometry_hash_before = stage.geometry.params.content_hash();

    let mut texture_gen = TextureGenerator::new(cfg.net.clone(), cfg.seed ^ 0x746578)?;
    if !cfg.coupling {
        texture_gen.set_gates(0.0);
    }
    let cond_dim = CLOTHING_TYPE_COUNT + crate::labeler::TEXT_EMBED_DIM;
    let mut d_global = Discriminator::new(
        DiscriminatorConfig::new(cfg.image_size, cond_dim),
        cfg.seed ^ 0x6467,
    )?;
    let mut d_patch = Discriminator::new(
        DiscriminatorConfig::new(cfg.patch_size, cond_dim),
        cfg.seed ^ 0x6470,
    )?;
    let mut g_state = AdamState::new(&texture_gen.params.sizes());
    let mut dg_state = AdamState::new(&d_global.params.sizes());
    let mut dp_state = AdamState::new(&d_patch.params.sizes());
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let b = cfg.batch_size;
    let s = cfg.image_size;
    let r = cfg.net.resolution;
    let k = cfg.patch_count;
    let mut log = MetricsLog::new();
    let mut total_mask_violations = 0u64;
    let mut latest = Latest::default();

    // A bundle ties a dataset record's conditions/pose to fresh latents.
    let sample_bundle = |rng: &mut ChaCha8Rng| {
        let rows: Vec<usize> = (0..b).map(|_| rng.gen_range(0..data.conds.len())).collect();
        let z_g = randn_rows(rng, b, LATENT_DIM);
        let z_t = randn_rows(rng, b, LATENT_DIM);
        (rows, z_g, z_t)
    };

    // Forward both generators (frozen or not) and render the batch.
    // Returns (tape ids, per-sample outputs).
    #[allow(clippy::type_complexity)]
    let run_generators = |tape: &mut Tape,
                          texture_gen: &TextureGenerator,
                          rows: &[usize],
                          z_g: &[Vec<f64>],
                          z_t: &[Vec<f64>],
                          trainable: bool|
     -> Result<(TensorId, Vec<crate::render::RenderOutput>, Bound, u64)> {
        let geo_bound = bind(&stage.geometry.params, tape, false);
        let zg_t = rows_tensor(tape, z_g, false)?;
        let cg_rows: Vec<Vec<f64>> = rows.iter().map(|&i| one_hot(data.codes[i])).collect();
        let cg_t = rows_tensor(tape, &cg_rows, false)?;
        let theta_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| pose_condition_vector(&data.poses[i]))
            .collect();
        let th_t = rows_tensor(tape, &theta_rows, false)?;
        let (disp_t, feats) =
            stage
                .geometry
                .forward(tape, &geo_bound, zg_t, cg_t, th_t, stage.mask)?;

        let tex_bound = bind(&texture_gen.params, tape, trainable);
        let zt_t = rows_tensor(tape, z_t, false)?;
        let ct_rows: Vec<Vec<f64>> = rows.iter().map(|&i| data.color_embeds[i].clone()).collect();
        let ct_t = rows_tensor(tape, &ct_rows, false)?;
        let tex_t = texture_gen.forward(tape, &tex_bound, zt_t, cg_t, ct_t, Some(&feats))?;

        let per = r * r * 3;
        let disp_all = tape.value(disp_t).to_vec();
        let violations = mask_violations(&disp_all, r, stage.mask);
        let tex_all = tape.value(tex_t).to_vec();
        let renders: Vec<crate::render::RenderOutput> = rows
            .iter()
            .enumerate()
            .map(|(i, &row)| {
                render_fake(
                    stage,
                    cfg,
                    &disp_all[i * per..(i + 1) * per],
                    &tex_all[i * per..(i + 1) * per],
                    &data.poses[row],
                )
            })
            .collect::<Result<_>>()?;
        Ok((tex_t, renders, tex_bound, violations))
    };

    for step in 0..cfg.steps {
        // ---- Discriminator update.
        let mut tape = Tape::new();
        let (rows, z_g, z_t) = sample_bundle(&mut rng);
        let (_tex_t, renders, _, violations) =
            run_generators(&mut tape, &texture_gen, &rows, &z_g, &z_t, false)?;
        total_mask_violations += violations;
        let fake_imgs: Vec<f64> = renders.iter().flat_map(|o| o.rgb.iter().copied()).collect();
        let cond_rows: Vec<Vec<f64>> = rows.iter().map(|&i| data.conds[i].clone()).collect();

        let real_rows: Vec<usize> = (0..b).map(|_| rng.gen_range(0..data.images.len())).collect();
        let mut real_imgs = Vec::with_capacity(b * s * s * 3);
        let mut real_conds = Vec::with_capacity(b);
        for &row in &real_rows {
            let flip = cfg.flip_augment && rng.gen_bool(0.5);
            if flip {
                real_imgs.extend(flip_raster(&data.images[row], s));
            } else {
                real_imgs.extend_from_slice(&data.images[row]);
            }
            real_conds.push(data.conds[row].clone());
        }

        let mut d_terms: Vec<TensorId> = Vec::new();
        let mut r1_terms: Vec<TensorId> = Vec::new();
        let mut wrt: Vec<TensorId> = Vec::new();
        let mut stores: Vec<(&mut ParamStore, &mut AdamState)> = Vec::new();

        let dg_bound = bind(&d_global.params, &mut tape, true);
        let dp_bound = bind(&d_patch.params, &mut tape, true);

        if cfg.use_global_disc {
            let real_leaf = tape.leaf(&[b, s, s, 3], real_imgs.clone());
            let fake_const = tape.constant(&[b, s, s, 3], fake_imgs.clone());
            let rc = rows_tensor(&mut tape, &real_conds, false)?;
            let fc = rows_tensor(&mut tape, &cond_rows, false)?;
            let rl = d_global.forward(&mut tape, &dg_bound, real_leaf, rc)?;
            let fl = d_global.forward(&mut tape, &dg_bound, fake_const, fc)?;
            d_terms.push(nonsat_d_loss(&mut tape, rl, fl)?);
            r1_terms.push(r1_penalty_from_logits(
                &mut tape,
                rl,
                real_leaf,
                cfg.r1_gamma,
            )?);
        }
        if cfg.use_patch_disc {
            let ps = cfg.patch_size;
            // Real patches.
            let mut real_patch_data = Vec::with_capacity(b * k * ps * ps * 3);
            let mut real_patch_conds = Vec::with_capacity(b * k);
            for (bi, &row) in real_rows.iter().enumerate() {
                let origins =
                    choose_patch_origins(&data.alphas[row], s, s, k, ps, &mut rng)?;
                let img = &real_imgs[bi * s * s * 3..(bi + 1) * s * s * 3];
                for patch in extract_patches(img, s, &origins) {
                    real_patch_data.extend(patch);
                    real_patch_conds.push(real_conds[bi].clone());
                }
            }
            // Fake patches.
            let mut fake_patch_data = Vec::with_capacity(b * k * ps * ps * 3);
            let mut fake_patch_conds = Vec::with_capacity(b * k);
            for (bi, out) in renders.iter().enumerate() {
                let origins = choose_patch_origins(&out.alpha, s, s, k, ps, &mut rng)?;
                for patch in extract_patches(&out.rgb, s, &origins) {
                    fake_patch_data.extend(patch);
                    fake_patch_conds.push(cond_rows[bi].clone());
                }
            }
            let real_leaf = tape.leaf(&[b * k, ps, ps, 3], real_patch_data);
            let fake_const = tape.constant(&[b * k, ps, ps, 3], fake_patch_data);
            let rc = rows_tensor(&mut tape, &real_patch_conds, false)?;
            let fc = rows_tensor(&mut tape, &fake_patch_conds, false)?;
            let rl = d_patch.forward(&mut tape, &dp_bound, real_leaf, rc)?;
            let fl = d_patch.forward(&mut tape, &dp_bound, fake_const, fc)?;
            d_terms.push(nonsat_d_loss(&mut tape, rl, fl)?);
            r1_terms.push(r1_penalty_from_logits(
                &mut tape,
                rl,
                real_leaf,
                cfg.r1_gamma,
            )?);
        }
        let mut d_main = d_terms[0];
        for &t in &d_terms[1..] {
            d_main = tape.add(d_main, t)?;
        }
        let mut r1_total = r1_terms[0];
        for &t in &r1_terms[1..] {
            r1_total = tape.add(r1_total, t)?;
        }
        let d_total = tape.add(d_main, r1_total)?;
        if cfg.use_global_disc {
            wrt.extend(&dg_bound.ids);
            stores.push((&mut d_global.params, &mut dg_state));
        }
        if cfg.use_patch_disc {
            wrt.extend(&dp_bound.ids);
            stores.push((&mut d_patch.params, &mut dp_state));
        }
        let d_grads = tape.grad(d_total, &wrt, false)?;
        latest.d = tape.scalar(d_main);
        latest.r1 = tape.scalar(r1_total);
        let mut offset = 0;
        for (params, state) in stores {
            let count = params.len();
            let slices: Vec<&[f64]> = d_grads[offset..offset + count]
                .iter()
                .map(|&g| tape.value(g))
                .collect();
            adam_step(&mut params.values, &slices, state, &adam)?;
            offset += count;
        }
        drop(tape);

        // ---- Generator update (gradients cross the renderer via its
        // texture adjoint).
        let mut tape = Tape::new();
        let (rows, z_g, z_t) = sample_bundle(&mut rng);
        let (tex_t, renders, tex_bound, violations) =
            run_generators(&mut tape, &texture_gen, &rows, &z_g, &z_t, true)?;
        total_mask_violations += violations;
        let cond_rows: Vec<Vec<f64>> = rows.iter().map(|&i| data.conds[i].clone()).collect();
        let fake_imgs: Vec<f64> = renders.iter().flat_map(|o| o.rgb.iter().copied()).collect();

        let dg_bound = bind(&d_global.params, &mut tape, false);
        let dp_bound = bind(&d_patch.params, &mut tape, false);
        let mut g_terms = Vec::new();
        let mut input_leaves = Vec::new();
        let mut patch_origins_per_img: Vec<crate::render::PatchSet> = Vec::new();

        let img_leaf = tape.leaf(&[b, s, s, 3], fake_imgs.clone());
        if cfg.use_global_disc {
            let fc = rows_tensor(&mut tape, &cond_rows, false)?;
            let fl = d_global.forward(&mut tape, &dg_bound, img_leaf, fc)?;
            g_terms.push(nonsat_g_loss(&mut tape, fl));
        }
        input_leaves.push(img_leaf);
        if cfg.use_patch_disc {
            let ps = cfg.patch_size;
            let mut patch_data = Vec::with_capacity(b * k * ps * ps * 3);
            let mut patch_conds = Vec::with_capacity(b * k);
            for (bi, out) in renders.iter().enumerate() {
                let origins = choose_patch_origins(&out.alpha, s, s, k, ps, &mut rng)?;
                for patch in extract_patches(&out.rgb, s, &origins) {
                    patch_data.extend(patch);
                    patch_conds.push(cond_rows[bi].clone());
                }
                patch_origins_per_img.push(origins);
            }
            let patch_leaf = tape.leaf(&[b * k, ps, ps, 3], patch_data);
            let fc = rows_tensor(&mut tape, &patch_conds, false)?;
            let fl = d_patch.forward(&mut tape, &dp_bound, patch_leaf, fc)?;
            g_terms.push(nonsat_g_loss(&mut tape, fl));
            input_leaves.push(patch_leaf);
        }
        let mut g_loss = g_terms[0];
        for &t in &g_terms[1..] {
            g_loss = tape.add(g_loss, t)?;
        }
        latest.g = tape.scalar(g_loss);

        let input_grads = tape.grad(g_loss, &input_leaves, false)?;
        let mut img_grad = tape.value(input_grads[0]).to_vec();
        if cfg.use_patch_disc {
            let ps = cfg.patch_size;
            let patch_grad = tape.value(input_grads[1]).to_vec();
            let per_patch = ps * ps * 3;
            for (bi, origins) in patch_origins_per_img.iter().enumerate() {
                let grads: Vec<Vec<f64>> = (0..k)
                    .map(|pi| {
                        patch_grad[(bi * k + pi) * per_patch..(bi * k + pi + 1) * per_patch]
                            .to_vec()
                    })
                    .collect();
                let scattered = scatter_patch_grads(&grads, origins, s, s);
                let img_base = bi * s * s * 3;
                for (dst, src) in img_grad[img_base..img_base + s * s * 3]
                    .iter_mut()
                    .zip(&scattered)
                {
                    *dst += src;
                }
            }
        }
        // Through the renderer: pixel gradients -> texel gradients.
        let per_img = s * s * 3;
        let per_tex = r * r * 3;
        let mut texel_seed = vec![0.0; b * per_tex];
        for (bi, out) in renders.iter().enumerate() {
            let g = texture_backward(&img_grad[bi * per_img..(bi + 1) * per_img], out)?;
            texel_seed[bi * per_tex..(bi + 1) * per_tex].copy_from_slice(&g);
        }
        let g_grads = tape.grad_seeded(tex_t, texel_seed, &tex_bound.ids, false)?;
        let slices: Vec<&[f64]> = g_grads.iter().map(|&g| tape.value(g)).collect();
        adam_step(&mut texture_gen.params.values, &slices, &mut g_state, &adam)?;
        drop(tape);

        // ---- Metrics.
        if cfg.metric_every > 0 && (step + 1) % cfg.metric_every == 0 {
            let m = 16.min(data.images.len()).max(2);
            let reals: Vec<Vec<f64>> = (0..m)
                .map(|_| downsample_8x8(&data.images[rng.gen_range(0..data.images.len())], s))
                .collect();
            let mut tape = Tape::new();
            let (rows, z_g, z_t) = sample_bundle(&mut rng);
            let (_t, renders, _, _) =
                run_generators(&mut tape, &texture_gen, &rows, &z_g, &z_t, false)?;
            let fakes: Vec<Vec<f64>> = renders
                .iter()
                .map(|o| downsample_8x8(&o.rgb, s))
                .collect();
            log.last_pixel_fd = Some(frechet_distance(&reals, &fakes));
        }
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log.push(step, latest.d, latest.g, latest.r1, total_mask_violations);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            texture_gen.params.save_checkpoint(
                &out_dir.join(format!("checkpoint_step{:06}", step + 1)),
                Some(&g_state),
                &metadata(cfg, "texture")?,
            )?;
        }
    }

    if stage.geometry.params.content_hash() != geometry_hash_before {
        return Err(Error::CheckpointMismatch(
            "geometry parameters changed during texture training".into(),
        ));
    }

    let csv_path = out_dir.join("metrics.csv");
    log.write(&csv_path)?;
    let ckpt = out_dir.join("checkpoint");
    let mut meta = metadata(cfg, "texture")?;
    meta.push((
        "geometry_hash".into(),
        format!("{:016x}", geometry_hash_before),
    ));
    texture_gen
        .params
        .save_checkpoint(&ckpt, Some(&g_state), &meta)?;
    d_global.params.save_checkpoint(
        &out_dir.join("checkpoint_dglobal"),
        Some(&dg_state),
        &metadata(cfg, "texture_dglobal")?,
    )?;
    d_patch.params.save_checkpoint(
        &out_dir.join("checkpoint_dpatch"),
        Some(&dp_state),
        &metadata(cfg, "texture_dpatch")?,
    )?;
    Ok(TrainReport {
        steps: cfg.steps,
        csv_path: csv_path.to_string_lossy().into_owned(),
        checkpoint_dir: ckpt.to_string_lossy().into_owned(),
        mask_violations: total_mask_violations,
        final_d_loss: latest.d,
        final_g_loss: latest.g,
        adam_skipped: g_state.skipped + dg_state.skipped + dp_state.skipped,
    })
}

/// The six ablation run configurations, as (tag, config) pairs.
pub fn ablation_matrix(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let make = |coupling: bool, global: bool, patch: Option<usize>| {
        let mut cfg = base.clone();
        cfg.coupling = coupling;
        cfg.use_global_disc = global;
        cfg.use_patch_disc = patch.is_some();
        if let Some(ps) = patch {
            cfg.patch_size = ps;
        }
        cfg
    };
    vec![
        ("a", make(false, true, Some(DEFAULT_PATCH_SIZE))),
        ("b", make(true, true, None)),
        ("c", make(true, false, Some(32))),
        ("d", make(true, false, Some(DEFAULT_PATCH_SIZE))),
        ("e", make(true, true, Some(32))),
        ("f", make(true, true, Some(DEFAULT_PATCH_SIZE))),
    ]
}

/// Writes the six ablation configs as JSON files under `out_dir`.
pub fn write_ablation_configs(base: &TrainConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for (tag, cfg) in ablation_matrix(base) {
        let path = out_dir.join(format!("ablation_{tag}.json"));
        cfg.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_toy_body, synth_geometry_dataset, synth_texture_dataset, toy_camera};
    use crate::uv::build_mask;

    #[test]
    fn nonsat_losses_closed_forms() {
        let mut tape = Tape::new();
        let zeros = tape.constant(&[4, 1], vec![0.0; 4]);
        let g = nonsat_g_loss(&mut tape, zeros);
        assert!((tape.scalar(g) - std::f64::consts::LN_2).abs() < 1e-12);
        let d = nonsat_d_loss(&mut tape, zeros, zeros).unwrap();
        assert!((tape.scalar(d) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        // Perfect discriminator drives its loss to zero.
        let real = tape.constant(&[2, 1], vec![40.0, 35.0]);
        let fake = tape.constant(&[2, 1], vec![-40.0, -35.0]);
        let d = nonsat_d_loss(&mut tape, real, fake).unwrap();
        assert!(tape.scalar(d).abs() < 1e-12);
    }

    #[test]
    fn g_loss_gradient_sign_is_negative() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&[3, 1], vec![-2.0, 0.0, 3.0]);
        let g = nonsat_g_loss(&mut tape, logits);
        let grad = tape.grad(g, &[logits], false).unwrap()[0];
        assert!(tape.value(grad).iter().all(|&v| v < 0.0));
    }

    #[test]
    fn r1_linear_discriminator_closed_form() {
        // D(x) = <w, x> per sample: penalty = (gamma/2) ||w||^2.
        let mut tape = Tape::new();
        let w_data = vec![0.5, -1.0, 2.0, 0.25];
        let gamma = 1.7;
        let x = vec![0.3, 0.4, 0.5, 0.6, 1.0, -1.0, 0.0, 2.0];
        let pen = r1_penalty(&mut tape, &x, &[2, 4], gamma, |tape, xt| {
            let w = tape.constant(&[4, 1], w_data.clone());
            tape.matmul(xt, w)
        })
        .unwrap();
        let expect = gamma / 2.0 * w_data.iter().map(|v| v * v).sum::<f64>();
        assert!((tape.scalar(pen) - expect).abs() < 1e-12);

        // Constant discriminator: zero penalty.
        let mut tape = Tape::new();
        let pen = r1_penalty(&mut tape, &x, &[2, 4], gamma, |tape, _| {
            Ok(tape.constant(&[2, 1], vec![3.0, 3.0]))
        })
        .unwrap();
        assert_eq!(tape.scalar(pen), 0.0);
    }

    #[test]
    fn constant_discriminator_floors_g_loss_with_zero_grads() {
        // Zero-init discriminator emits exactly zero logits: G loss = ln 2
        // and no gradient reaches the generator.
        let (_, atlas) = make_toy_body();
        let mask = build_mask(&atlas, 16).unwrap();
        let cfg = GeneratorConfig {
            base_resolution: 4,
            resolution: 16,
            channels: vec![24, 16, 12],
            ..GeneratorConfig::desk()
        };
        let gen = GeometryGenerator::new(cfg, 3).unwrap();
        let disc =
            Discriminator::new(DiscriminatorConfig::new(16, 75), 4).unwrap();
        let mut tape = Tape::new();
        let g_bound = bind(&gen.params, &mut tape, true);
        let z = rows_tensor(&mut tape, &randn_rows(&mut ChaCha8Rng::seed_from_u64(5), 2, LATENT_DIM), false).unwrap();
        let cg = rows_tensor(&mut tape, &[one_hot(0), one_hot(3)], false).unwrap();
        let th = rows_tensor(&mut tape, &vec![vec![0.0; 69]; 2], false).unwrap();
        let (fake, _) = gen.forward(&mut tape, &g_bound, z, cg, th, &mask).unwrap();
        let d_bound = bind(&disc.params, &mut tape, false);
        let cond = rows_tensor(&mut tape, &vec![vec![0.0; 75]; 2], false).unwrap();
        let logits = disc.forward(&mut tape, &d_bound, fake, cond).unwrap();
        let g = nonsat_g_loss(&mut tape, logits);
        assert!((tape.scalar(g) - std::f64::consts::LN_2).abs() < 1e-12);
        let grads = tape.grad(g, &g_bound.ids, false).unwrap();
        for &gid in &grads {
            assert!(tape.value(gid).iter().all(|&v| v == 0.0));
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            net: GeneratorConfig {
                base_resolution: 4,
                resolution: 16,
                channels: vec![24, 16, 12],
                ..GeneratorConfig::desk()
            },
            seed: 7,
            steps: 3,
            batch_size: 2,
            image_size: 32,
            patch_size: 16,
            patch_count: 2,
            metric_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn geometry_training_smoke_and_determinism() {
        let (model, atlas) = make_toy_body();
        let data_dir = tempfile::tempdir().unwrap();
        let dataset =
            synth_geometry_dataset(&model, &atlas, data_dir.path(), 6, 2, 16, 3).unwrap();
        let mask = build_mask(&atlas, 16).unwrap();
        let cfg = tiny_train_cfg();

        let out1 = tempfile::tempdir().unwrap();
        let report1 = train_geometry(&cfg, &dataset, &mask, out1.path()).unwrap();
        assert_eq!(report1.mask_violations, 0);
        assert!(report1.final_d_loss.is_finite());
        assert!(report1.final_g_loss.is_finite());

        let out2 = tempfile::tempdir().unwrap();
        let report2 = train_geometry(&cfg, &dataset, &mask, out2.path()).unwrap();
        let csv1 = fs::read(&report1.csv_path).unwrap();
        let csv2 = fs::read(&report2.csv_path).unwrap();
        assert_eq!(csv1, csv2, "training is not deterministic");

        // Zero steps: checkpoint equals initialization.
        let mut cfg0 = cfg.clone();
        cfg0.steps = 0;
        let out0 = tempfile::tempdir().unwrap();
        train_geometry(&cfg0, &dataset, &mask, out0.path()).unwrap();
        let mut fresh = GeometryGenerator::new(cfg0.net.clone(), cfg0.seed ^ 0x67656f).unwrap();
        let init_hash = fresh.params.content_hash();
        fresh
            .params
            .load_checkpoint(&out0.path().join("checkpoint"))
            .unwrap();
        // f32 storage round trip: compare hashes of re-saved values instead
        // of exact equality.
        let reloaded_hash = fresh.params.content_hash();
        let mut fresh2 = GeometryGenerator::new(cfg0.net.clone(), cfg0.seed ^ 0x67656f).unwrap();
        for v in fresh2.params.values.iter_mut() {
            for x in v.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
        assert_eq!(reloaded_hash, fresh2.params.content_hash());
        let _ = init_hash;
    }

    #[test]
    fn texture_training_smoke_frozen_geometry() {
        let (model, atlas) = make_toy_body();
        let data_dir = tempfile::tempdir().unwrap();
        let palette = vec!["red".to_string()];
        let dataset = synth_texture_dataset(
            &model, &atlas, data_dir.path(), 4, &palette, 32, 16, 9,
        )
        .unwrap();
        let cfg = tiny_train_cfg();
        let mask = build_mask(&atlas, 16).unwrap();
        let geometry = GeometryGenerator::new(cfg.net.clone(), 11).unwrap();
        let hash_before = geometry.params.content_hash();
        let camera = toy_camera(32);
        let stage = TextureStage {
            geometry: &geometry,
            model: &model,
            atlas: &atlas,
            mask: &mask,
            camera: &camera,
        };
        let out = tempfile::tempdir().unwrap();
        let report = train_texture(&cfg, &stage, &dataset, out.path()).unwrap();
        assert_eq!(geometry.params.content_hash(), hash_before);
        assert!(report.final_d_loss.is_finite());
        assert!(report.final_g_loss.is_finite());
        assert!(out.path().join("checkpoint/manifest.json").exists());
    }

    #[test]
    fn ablation_matrix_matches_table() {
        let base = TrainConfig::default();
        let matrix = ablation_matrix(&base);
        assert_eq!(matrix.len(), 6);
        let get = |tag: &str| &matrix.iter().find(|(t, _)| *t == tag).unwrap().1;
        // (f): both discriminators, patch 64, coupling on.
        let f = get("f");
        assert!(f.coupling && f.use_global_disc && f.use_patch_disc);
        assert_eq!(f.patch_size, 64);
        // (b): only the global discriminator.
        let bb = get("b");
        assert!(bb.use_global_disc && !bb.use_patch_disc);
        // (a) differs from (f) only in coupling.
        let a = get("a");
        assert!(!a.coupling);
        let mut a_like_f = a.clone();
        a_like_f.coupling = true;
        assert_eq!(
            serde_json::to_string(&a_like_f).unwrap(),
            serde_json::to_string(f).unwrap()
        );
        // (c)/(e) use 32, (d) uses 64.
        assert_eq!(get("c").patch_size, 32);
        assert_eq!(get("d").patch_size, 64);
        assert_eq!(get("e").patch_size, 32);
        assert!(!get("c").use_global_disc && get("e").use_global_disc);
    }

    #[test]
    fn frechet_distance_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let d = frechet_distance(&rows, &rows);
        assert!(d.abs() < 1e-8, "self distance {d}");

        // Shifted mean shows up as the squared shift.
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v + 2.0).collect())
            .collect();
        let d = frechet_distance(&rows, &shifted);
        assert!((d - 6.0 * 4.0).abs() < 1e-6, "shift distance {d}");
    }
}
