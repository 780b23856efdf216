//! Generator and discriminator networks.
//!
//! Both generators share one synthesis architecture: a mapping network turns
//! the latent plus condition embeddings into a style vector, and a stack of
//! upsample+conv blocks modulated per-channel by that style grows a learned
//! 4x4 constant to the output raster. The texture generator additionally
//! receives the geometry generator's per-level block features, added into
//! its own blocks through learnable scalar gates (the coupling; gates at 0
//! disconnect it). Discriminators are conv stacks conditioned by
//! concatenating embedded condition channels onto the input.
//!
//! Output heads are zero-initialized, so a fresh generator emits exactly
//! zero maps and a fresh discriminator emits exactly zero logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, TensorId};
use crate::error::{invalid, Error, Result};
use crate::labeler::{CLOTHING_TYPE_COUNT, TEXT_EMBED_DIM};
use crate::uv::UvMask;

pub const LATENT_DIM: usize = 512;
pub const POSE_COND_DIM: usize = 69;

/// Synthesis/mapping shape shared by the two generators.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    pub base_resolution: usize,
    pub resolution: usize,
    /// Channels per level, `channels[0]` at the base resolution.
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub mapping_layers: usize,
    pub clothing_embed_dim: usize,
    pub pose_embed_dim: usize,
}

impl GeneratorConfig {
    /// Desk-scale defaults: 32x32 output, laptop-trainable.
    pub fn desk() -> GeneratorConfig {
        GeneratorConfig {
            base_resolution: 4,
            resolution: 32,
            channels: vec![128, 96, 64, 48],
            latent_dim: LATENT_DIM,
            mapping_layers: 2,
            clothing_embed_dim: 16,
            pose_embed_dim: 64,
        }
    }

    /// Full-scale 256x256 configuration.
    pub fn paper() -> GeneratorConfig {
        GeneratorConfig {
            base_resolution: 4,
            resolution: 256,
            channels: vec![512, 512, 384, 256, 128, 96, 64],
            latent_dim: LATENT_DIM,
            mapping_layers: 2,
            clothing_embed_dim: 16,
            pose_embed_dim: 64,
        }
    }

    /// Number of upsampling levels above the base.
    pub fn levels(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_resolution == 0 || self.channels.is_empty() {
            return Err(invalid("generator config needs a base and channels"));
        }
        let expected = self.base_resolution << self.levels();
        if expected != self.resolution {
            return Err(invalid(format!(
                "resolution {} is not base {} doubled {} times",
                self.resolution,
                self.base_resolution,
                self.levels()
            )));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * std
        })
        .collect()
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Parameters bound onto a tape for one forward pass, aligned with the
/// store's ordering.
pub struct Bound {
    pub ids: Vec<TensorId>,
}

pub fn bind(store: &ParamStore, tape: &mut Tape, trainable: bool) -> Bound {
    let ids = store
        .shapes
        .iter()
        .zip(&store.values)
        .map(|(shape, values)| {
            if trainable {
                tape.leaf(shape, values.clone())
            } else {
                tape.constant(shape, values.clone())
            }
        })
        .collect();
    Bound { ids }
}

fn linear(
    tape: &mut Tape,
    x: TensorId,
    w: TensorId,
    b: Option<TensorId>,
) -> Result<TensorId> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => {
            let rows = tape.shape(y)[0];
            let cols = tape.shape(y)[1];
            let bb = tape.broadcast(b, &[rows, cols])?;
            tape.add(y, bb)
        }
        None => Ok(y),
    }
}

/// Style modulation: per-channel `x * (1 + s) + t` with `(s, t)` from an
/// affine map of the style vector.
fn modulate(
    tape: &mut Tape,
    x: TensorId,
    style: TensorId,
    w_affine: TensorId,
    b_affine: TensorId,
) -> Result<TensorId> {
    let shape = tape.shape(x).to_vec(); // [B, H, W, C]
    let (batch, c) = (shape[0], shape[3]);
    let st = linear(tape, style, w_affine, Some(b_affine))?; // [B, 2C]
    let s = tape.slice(st, 1, 0, c)?;
    let t = tape.slice(st, 1, c, c)?;
    // 1 + s on the small tensor, then broadcast once per operand.
    let s1 = tape.add_scalar(s, 1.0);
    let s1 = tape.reshape(s1, &[batch, 1, 1, c])?;
    let t = tape.reshape(t, &[batch, 1, 1, c])?;
    let s1 = tape.broadcast(s1, &shape)?;
    let t = tape.broadcast(t, &shape)?;
    let xs = tape.mul(x, s1)?;
    tape.add(xs, t)
}

fn conv_block(
    tape: &mut Tape,
    x: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let y = tape.conv2d(x, w)?;
    let shape = tape.shape(y).to_vec();
    let c = shape[3];
    let br = tape.reshape(b, &[1, 1, 1, c])?;
    let bb = tape.broadcast(br, &shape)?;
    tape.add(y, bb)
}

/// Registers the mapping + synthesis parameters shared by both generators.
fn register_generator_params(
    params: &mut ParamStore,
    cfg: &GeneratorConfig,
    cond_dim: usize,
    rng: &mut ChaCha8Rng,
) {
    let map_in = cfg.latent_dim + cond_dim;
    let mut dims = vec![map_in];
    dims.extend(std::iter::repeat(cfg.latent_dim).take(cfg.mapping_layers));
    for i in 0..cfg.mapping_layers {
        params.add(
            &format!("mapping/{i}/w"),
            &[dims[i], dims[i + 1]],
            normal_vec(rng, dims[i] * dims[i + 1], he_std(dims[i])),
        );
        params.add(&format!("mapping/{i}/b"), &[dims[i + 1]], vec![0.0; dims[i + 1]]);
    }
    let base = cfg.base_resolution;
    let c0 = cfg.channels[0];
    params.add(
        "synthesis/const",
        &[base, base, c0],
        normal_vec(rng, base * base * c0, 1.0),
    );
    for (level, &c) in cfg.channels.iter().enumerate() {
        params.add(
            &format!("synthesis/{level}/affine_w"),
            &[cfg.latent_dim, 2 * c],
            normal_vec(rng, cfg.latent_dim * 2 * c, 0.05 * he_std(cfg.latent_dim)),
        );
        params.add(&format!("synthesis/{level}/affine_b"), &[2 * c], vec![0.0; 2 * c]);
        if level > 0 {
            let cin = cfg.channels[level - 1];
            params.add(
                &format!("synthesis/{level}/conv_w"),
                &[3, 3, cin, c],
                normal_vec(rng, 9 * cin * c, he_std(9 * cin)),
            );
            params.add(&format!("synthesis/{level}/conv_b"), &[c], vec![0.0; c]);
        }
    }
    let c_last = *cfg.channels.last().unwrap();
    params.add("head/w", &[3, 3, c_last, 3], vec![0.0; 9 * c_last * 3]);
    params.add("head/b", &[3], vec![0.0; 3]);
}

/// Shared mapping + synthesis forward. Returns the pre-head feature of every
/// level (post-activation, post-coupling when `coupling` is given).
#[allow(clippy::too_many_arguments)]
fn synthesis_forward(
    tape: &mut Tape,
    params: &ParamStore,
    bound: &Bound,
    cfg: &GeneratorConfig,
    cond: TensorId,
    latent: TensorId,
    coupling: Option<(&[TensorId], &[TensorId])>,
) -> Result<(TensorId, Vec<TensorId>)> {
    let id = |name: &str| bound.ids[params.id(name)];
    let batch = tape.shape(latent)[0];

    let mut style = tape.concat(&[latent, cond], 1)?;
    for i in 0..cfg.mapping_layers {
        style = linear(
            tape,
            style,
            id(&format!("mapping/{i}/w")),
            Some(id(&format!("mapping/{i}/b"))),
        )?;
        style = tape.leaky_relu(style);
    }

    let base = cfg.base_resolution;
    let c0 = cfg.channels[0];
    let constant = id("synthesis/const");
    let constant = tape.reshape(constant, &[1, base, base, c0])?;
    let mut x = tape.broadcast(constant, &[batch, base, base, c0])?;

    let mut features = Vec::with_capacity(cfg.channels.len());
    for (level, &c) in cfg.channels.iter().enumerate() {
        if level > 0 {
            x = tape.upsample2(x)?;
            x = conv_block(
                tape,
                x,
                id(&format!("synthesis/{level}/conv_w")),
                id(&format!("synthesis/{level}/conv_b")),
            )?;
        }
        x = modulate(
            tape,
            x,
            style,
            id(&format!("synthesis/{level}/affine_w")),
            id(&format!("synthesis/{level}/affine_b")),
        )?;
        x = tape.leaky_relu(x);
        if let Some((geo_features, gates)) = coupling {
            let feat = geo_features[level];
            if tape.shape(feat) != tape.shape(x) {
                return Err(Error::CouplingShape {
                    level,
                    texture: tape.shape(x).to_vec(),
                    geometry: tape.shape(feat).to_vec(),
                });
            }
            let shape = tape.shape(x).to_vec();
            let gate = tape.reshape(gates[level], &[1, 1, 1, 1])?;
            let gate = tape.broadcast(gate, &shape)?;
            let gated = tape.mul(feat, gate)?;
            x = tape.add(x, gated)?;
        }
        features.push(x);
        let _ = c;
    }
    let raw = conv_block(tape, x, id("head/w"), id("head/b"))?;
    Ok((raw, features))
}

/// Pose- and clothing-conditioned displacement-map generator.
#[derive(Debug, Clone)]
pub struct GeometryGenerator {
    pub cfg: GeneratorConfig,
    pub params: ParamStore,
}

impl GeometryGenerator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<GeometryGenerator> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.add(
            "embed/clothing_w",
            &[CLOTHING_TYPE_COUNT, cfg.clothing_embed_dim],
            normal_vec(
                &mut rng,
                CLOTHING_TYPE_COUNT * cfg.clothing_embed_dim,
                he_std(CLOTHING_TYPE_COUNT),
            ),
        );
        params.add(
            "embed/pose_w",
            &[POSE_COND_DIM, cfg.pose_embed_dim],
            normal_vec(
                &mut rng,
                POSE_COND_DIM * cfg.pose_embed_dim,
                he_std(POSE_COND_DIM),
            ),
        );
        register_generator_params(
            &mut params,
            &cfg,
            cfg.clothing_embed_dim + cfg.pose_embed_dim,
            &mut rng,
        );
        Ok(GeometryGenerator { cfg, params })
    }

    /// Forward pass: returns the mask-gated displacement tensor
    /// `[B, R, R, 3]` (normalized units) and the per-level block features.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        latent: TensorId,
        clothing: TensorId,
        pose: TensorId,
        mask: &UvMask,
    ) -> Result<(TensorId, Vec<TensorId>)> {
        self.check_inputs(tape, latent, clothing, pose)?;
        if mask.resolution != self.cfg.resolution {
            return Err(invalid(format!(
                "mask resolution {} vs generator {}",
                mask.resolution, self.cfg.resolution
            )));
        }
        let id = |name: &str| bound.ids[self.params.id(name)];
        let cg_e = tape.matmul(clothing, id("embed/clothing_w"))?;
        let pose_e = tape.matmul(pose, id("embed/pose_w"))?;
        let cond = tape.concat(&[cg_e, pose_e], 1)?;
        let (raw, features) =
            synthesis_forward(tape, &self.params, bound, &self.cfg, cond, latent, None)?;

        let r = self.cfg.resolution;
        let mask_data: Vec<f64> = mask.data.iter().map(|&b| b as u8 as f64).collect();
        let mask_t = tape.constant(&[1, r, r, 1], mask_data);
        let shape = tape.shape(raw).to_vec();
        let mask_b = tape.broadcast(mask_t, &shape)?;
        let gated = tape.mul(raw, mask_b)?;
        Ok((gated, features))
    }

    fn check_inputs(
        &self,
        tape: &Tape,
        latent: TensorId,
        clothing: TensorId,
        pose: TensorId,
    ) -> Result<()> {
        let b = tape.shape(latent)[0];
        expect_shape(tape, latent, &[b, self.cfg.latent_dim], "latent")?;
        expect_shape(tape, clothing, &[b, CLOTHING_TYPE_COUNT], "clothing one-hot")?;
        expect_shape(tape, pose, &[b, POSE_COND_DIM], "pose condition")?;
        Ok(())
    }
}

/// Texture generator coupled to the geometry features.
#[derive(Debug, Clone)]
pub struct TextureGenerator {
    pub cfg: GeneratorConfig,
    pub params: ParamStore,
}

impl TextureGenerator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<TextureGenerator> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.add(
            "embed/clothing_w",
            &[CLOTHING_TYPE_COUNT, cfg.clothing_embed_dim],
            normal_vec(
                &mut rng,
                CLOTHING_TYPE_COUNT * cfg.clothing_embed_dim,
                he_std(CLOTHING_TYPE_COUNT),
            ),
        );
        register_generator_params(
            &mut params,
            &cfg,
            cfg.clothing_embed_dim + TEXT_EMBED_DIM,
            &mut rng,
        );
        for level in 0..cfg.channels.len() {
            params.add(&format!("coupling/{level}/gate"), &[1], vec![1.0]);
        }
        Ok(TextureGenerator { cfg, params })
    }

    /// Forward pass: texture tensor `[B, R, R, 3]` in [0,1]. `geo_features`
    /// couples the geometry generator's block outputs in; `None` runs the
    /// plain uncoupled generator.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        latent: TensorId,
        clothing: TensorId,
        color_embed: TensorId,
        geo_features: Option<&[TensorId]>,
    ) -> Result<TensorId> {
        let b = tape.shape(latent)[0];
        expect_shape(tape, latent, &[b, self.cfg.latent_dim], "latent")?;
        expect_shape(tape, clothing, &[b, CLOTHING_TYPE_COUNT], "clothing one-hot")?;
        expect_shape(tape, color_embed, &[b, TEXT_EMBED_DIM], "color embedding")?;

        let id = |name: &str| bound.ids[self.params.id(name)];
        let cg_e = tape.matmul(clothing, id("embed/clothing_w"))?;
        let cond = tape.concat(&[cg_e, color_embed], 1)?;

        let gates: Vec<TensorId> = (0..self.cfg.channels.len())
            .map(|level| id(&format!("coupling/{level}/gate")))
            .collect();
        let coupling = match geo_features {
            Some(features) => {
                if features.len() != self.cfg.channels.len() {
                    return Err(invalid(format!(
                        "got {} geometry features for {} levels",
                        features.len(),
                        self.cfg.channels.len()
                    )));
                }
                Some((features, gates.as_slice()))
            }
            None => None,
        };
        let (raw, _) =
            synthesis_forward(tape, &self.params, bound, &self.cfg, cond, latent, coupling)?;
        Ok(tape.sigmoid(raw))
    }

    /// Forces every coupling gate to a fixed value (0 disconnects the
    /// geometry conditioning; the ablation baseline).
    pub fn set_gates(&mut self, value: f64) {
        for level in 0..self.cfg.channels.len() {
            let idx = self.params.id(&format!("coupling/{level}/gate"));
            self.params.values[idx][0] = value;
        }
    }
}

/// Conditional discriminator: conv stack over the input with embedded
/// condition channels concatenated on, downsampling to 4x4 and a zero-init
/// scalar head.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub cond_dim: usize,
    pub cond_embed_dim: usize,
    /// Channels after each conv; length = log2(input_size / 4).
    pub channels: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn new(input_size: usize, cond_dim: usize) -> DiscriminatorConfig {
        let mut channels = Vec::new();
        let mut s = input_size;
        let mut c = 32;
        while s > 4 {
            channels.push(c.min(192));
            c += c / 2;
            s /= 2;
        }
        DiscriminatorConfig {
            input_size,
            in_channels: 3,
            cond_dim,
            cond_embed_dim: 8,
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size >> self.channels.len() != 4 {
            return Err(invalid(format!(
                "discriminator needs log2({}/4) levels, got {}",
                self.input_size,
                self.channels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Discriminator> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.add(
            "embed/cond_w",
            &[cfg.cond_dim, cfg.cond_embed_dim],
            normal_vec(&mut rng, cfg.cond_dim * cfg.cond_embed_dim, he_std(cfg.cond_dim)),
        );
        let mut cin = cfg.in_channels + cfg.cond_embed_dim;
        for (level, &c) in cfg.channels.iter().enumerate() {
            params.add(
                &format!("conv/{level}/w"),
                &[3, 3, cin, c],
                normal_vec(&mut rng, 9 * cin * c, he_std(9 * cin)),
            );
            params.add(&format!("conv/{level}/b"), &[c], vec![0.0; c]);
            cin = c;
        }
        let flat = 16 * cin;
        params.add("out/w", &[flat, 1], vec![0.0; flat]);
        params.add("out/b", &[1], vec![0.0]);
        Ok(Discriminator { cfg, params })
    }

    /// Scalar logit per sample: `[B, S, S, 3] -> [B, 1]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        image: TensorId,
        cond: TensorId,
    ) -> Result<TensorId> {
        let b = tape.shape(image)[0];
        let s = self.cfg.input_size;
        expect_shape(tape, image, &[b, s, s, self.cfg.in_channels], "disc input")?;
        expect_shape(tape, cond, &[b, self.cfg.cond_dim], "disc condition")?;

        let id = |name: &str| bound.ids[self.params.id(name)];
        let ce = tape.matmul(cond, id("embed/cond_w"))?;
        let ce = tape.reshape(ce, &[b, 1, 1, self.cfg.cond_embed_dim])?;
        let ce = tape.broadcast(ce, &[b, s, s, self.cfg.cond_embed_dim])?;
        let mut x = tape.concat(&[image, ce], 3)?;
        for level in 0..self.cfg.channels.len() {
            x = conv_block(
                tape,
                x,
                id(&format!("conv/{level}/w")),
                id(&format!("conv/{level}/b")),
            )?;
            x = tape.leaky_relu(x);
            x = tape.avg_pool2(x)?;
        }
        let flat = tape.shape(x)[1] * tape.shape(x)[2] * tape.shape(x)[3];
        let x = tape.reshape(x, &[b, flat])?;
        linear(tape, x, id("out/w"), Some(id("out/b")))
    }
}

fn expect_shape(tape: &Tape, id: TensorId, want: &[usize], context: &str) -> Result<()> {
    if tape.shape(id) != want {
        return Err(crate::error::shape_mismatch(
            context,
            tape.shape(id),
            want,
        ));
    }
    Ok(())
}

/// Flattens row vectors into a `[B, D]` tensor.
pub fn rows_tensor(tape: &mut Tape, rows: &[Vec<f64>], trainable: bool) -> Result<TensorId> {
    if rows.is_empty() {
        return Err(invalid("empty batch"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(invalid("ragged batch rows"));
    }
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend_from_slice(r);
    }
    let shape = [rows.len(), d];
    Ok(if trainable {
        tape.leaf(&shape, data)
    } else {
        tape.constant(&shape, data)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> GeneratorConfig {
        GeneratorConfig {
            base_resolution: 4,
            resolution: 16,
            channels: vec![24, 16, 12],
            latent_dim: LATENT_DIM,
            mapping_layers: 2,
            clothing_embed_dim: 16,
            pose_embed_dim: 64,
        }
    }

    fn full_mask(r: usize) -> UvMask {
        UvMask {
            resolution: r,
            data: vec![true; r * r],
        }
    }

    fn random_inputs(
        tape: &mut Tape,
        batch: usize,
        seed: u64,
    ) -> (TensorId, TensorId, TensorId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..LATENT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let cg: Vec<Vec<f64>> = (0..batch)
            .map(|_| {
                let mut v = vec![0.0; CLOTHING_TYPE_COUNT];
                v[rng.gen_range(0..CLOTHING_TYPE_COUNT)] = 1.0;
                v
            })
            .collect();
        let pose: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..POSE_COND_DIM).map(|_| rng.gen_range(-0.4..0.4)).collect())
            .collect();
        (
            rows_tensor(tape, &z, false).unwrap(),
            rows_tensor(tape, &cg, false).unwrap(),
            rows_tensor(tape, &pose, false).unwrap(),
        )
    }

    #[test]
    fn geometry_forward_shapes_and_mask_gate() {
        let gen = GeometryGenerator::new(tiny_cfg(), 1).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&gen.params, &mut tape, false);
        let (z, cg, pose) = random_inputs(&mut tape, 3, 10);
        // Checkerboard mask to exercise the gate.
        let mut mask = full_mask(16);
        for i in 0..16 {
            for j in 0..16 {
                mask.data[i * 16 + j] = (i + j) % 2 == 0;
            }
        }
        let (out, feats) = gen.forward(&mut tape, &bound, z, cg, pose, &mask).unwrap();
        assert_eq!(tape.shape(out), &[3, 16, 16, 3]);
        assert_eq!(feats.len(), 3);
        assert_eq!(tape.shape(feats[0])[1], 4);
        assert_eq!(tape.shape(feats[1])[1], 8);
        assert_eq!(tape.shape(feats[2])[1], 16);
        // Off-mask texels exactly zero.
        let v = tape.value(out);
        for b in 0..3 {
            for i in 0..16 {
                for j in 0..16 {
                    if !mask.get(i, j) {
                        for c in 0..3 {
                            assert_eq!(v[((b * 16 + i) * 16 + j) * 3 + c], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fresh_generator_head_emits_zero_maps() {
        let gen = GeometryGenerator::new(tiny_cfg(), 2).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&gen.params, &mut tape, false);
        let (z, cg, pose) = random_inputs(&mut tape, 2, 11);
        let (out, _) = gen.forward(&mut tape, &bound, z, cg, pose, &full_mask(16)).unwrap();
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn texture_zero_features_match_uncoupled_bitwise() {
        let cfg = tiny_cfg();
        let gen = TextureGenerator::new(cfg.clone(), 3).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&gen.params, &mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..LATENT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let z = rows_tensor(&mut tape, &z, false).unwrap();
        let cg = rows_tensor(
            &mut tape,
            &[vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]],
            false,
        )
        .unwrap();
        let ct: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..TEXT_EMBED_DIM).map(|_| rng.gen_range(-0.1..0.1)).collect())
            .collect();
        let ct = rows_tensor(&mut tape, &ct, false).unwrap();

        let uncoupled = gen.forward(&mut tape, &bound, z, cg, ct, None).unwrap();

        let zero_feats: Vec<TensorId> = [(4usize, 24usize), (8, 16), (16, 12)]
            .iter()
            .map(|&(s, c)| tape.zeros(&[2, s, s, c]))
            .collect();
        let coupled = gen
            .forward(&mut tape, &bound, z, cg, ct, Some(&zero_feats))
            .unwrap();

        let a: Vec<u64> = tape.value(uncoupled).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = tape.value(coupled).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_shape_mismatch_names_level() {
        let gen = TextureGenerator::new(tiny_cfg(), 4).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&gen.params, &mut tape, false);
        let (z, cg, _) = random_inputs(&mut tape, 2, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ct: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..TEXT_EMBED_DIM).map(|_| rng.gen_range(-0.1..0.1)).collect())
            .collect();
        let ct = rows_tensor(&mut tape, &ct, false).unwrap();
        let bad_feats: Vec<TensorId> = [(4usize, 24usize), (8, 99), (16, 12)]
            .iter()
            .map(|&(s, c)| tape.zeros(&[2, s, s, c]))
            .collect();
        match gen.forward(&mut tape, &bound, z, cg, ct, Some(&bad_feats)) {
            Err(Error::CouplingShape { level, .. }) => assert_eq!(level, 1),
            other => panic!("expected coupling error, got {other:?}"),
        }
    }

    #[test]
    fn discriminator_logit_shapes_and_zero_init() {
        let cfg = DiscriminatorConfig::new(16, 75);
        let disc = Discriminator::new(cfg, 7).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&disc.params, &mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let imgs: Vec<f64> = (0..4 * 16 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = tape.constant(&[4, 16, 16, 3], imgs);
        let cond: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..75).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let cond = rows_tensor(&mut tape, &cond, false).unwrap();
        let logits = disc.forward(&mut tape, &bound, img, cond).unwrap();
        assert_eq!(tape.shape(logits), &[4, 1]);
        // Zero-init output layer: logits exactly zero at init.
        assert!(tape.value(logits).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discriminator_is_per_sample() {
        // Permuting the batch permutes logits: no cross-sample mixing.
        let cfg = DiscriminatorConfig::new(16, 8);
        let mut disc = Discriminator::new(cfg, 8).unwrap();
        // Non-zero head so logits are informative.
        let out_w = disc.params.id("out/w");
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for v in disc.params.values[out_w].iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        let mut tape = Tape::new();
        let bound = bind(&disc.params, &mut tape, false);
        let a: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cond_a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cond_b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut run = |first: (&[f64], &[f64]), second: (&[f64], &[f64])| {
            let mut img = first.0.to_vec();
            img.extend_from_slice(second.0);
            let img = tape.constant(&[2, 16, 16, 3], img);
            let cond = rows_tensor(&mut tape, &[first.1.to_vec(), second.1.to_vec()], false).unwrap();
            let l = disc.forward(&mut tape, &bound, img, cond).unwrap();
            tape.value(l).to_vec()
        };
        let fwd = run((&a, &cond_a), (&b, &cond_b));
        let rev = run((&b, &cond_b), (&a, &cond_a));
        assert!(fwd.iter().all(|v| v.is_finite()));
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
    }

    #[test]
    fn discriminator_input_gradient_matches_finite_differences() {
        let cfg = DiscriminatorConfig::new(8, 6);
        let mut disc = Discriminator::new(cfg, 9).unwrap();
        let out_w = disc.params.id("out/w");
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for v in disc.params.values[out_w].iter_mut() {
            *v = rng.gen_range(-0.2..0.2);
        }
        let img_data: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.gen_range(0.1..0.9)).collect();
        let cond_data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let eval = |img_data: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let bound = bind(&disc.params, &mut tape, false);
            let img = tape.constant(&[1, 8, 8, 3], img_data.to_vec());
            let cond = tape.constant(&[1, 6], cond_data.clone());
            let l = disc.forward(&mut tape, &bound, img, cond).unwrap();
            tape.scalar(l)
        };

        let mut tape = Tape::new();
        let bound = bind(&disc.params, &mut tape, false);
        let img = tape.leaf(&[1, 8, 8, 3], img_data.clone());
        let cond = tape.constant(&[1, 6], cond_data.clone());
        let logit = disc.forward(&mut tape, &bound, img, cond).unwrap();
        let s = tape.sum(logit);
        let grad = tape.grad(s, &[img], false).unwrap()[0];
        let analytic = tape.value(grad).to_vec();
        let grad_inf = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let eps = 1e-6;
        for i in (0..img_data.len()).step_by(7) {
            let mut plus = img_data.clone();
            plus[i] += eps;
            let mut minus = img_data.clone();
            minus[i] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-3 * grad_inf).max(1e-9);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-5,
                "pixel {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn texture_condition_sensitivity() {
        // Changing the color embedding changes the texture output once the
        // head carries random (non-init) weights.
        let cfg = tiny_cfg();
        let mut gen = TextureGenerator::new(cfg, 21).unwrap();
        let head = gen.params.id("head/w");
        let mut head_rng = ChaCha8Rng::seed_from_u64(77);
        for v in gen.params.values[head].iter_mut() {
            *v = head_rng.gen_range(-0.1..0.1);
        }
        let mut tape = Tape::new();
        let bound = bind(&gen.params, &mut tape, false);
        let (z, cg, _) = random_inputs(&mut tape, 1, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ct1: Vec<f64> = (0..TEXT_EMBED_DIM).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let ct2: Vec<f64> = (0..TEXT_EMBED_DIM).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let c1 = tape.constant(&[1, TEXT_EMBED_DIM], ct1);
        let c2 = tape.constant(&[1, TEXT_EMBED_DIM], ct2);
        let t1 = gen.forward(&mut tape, &bound, z, cg, c1, None).unwrap();
        let t2 = gen.forward(&mut tape, &bound, z, cg, c2, None).unwrap();
        let diff: f64 = tape
            .value(t1)
            .iter()
            .zip(tape.value(t2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0, "texture must react to the color condition");
    }
}
