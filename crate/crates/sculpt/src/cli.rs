//! Command-line interface: one subcommand per pipeline stage.
//!
//! Every subcommand is seeded and reproducible; identical flags produce
//! byte-identical outputs. Errors exit with 1 for validation failures and 2
//! for I/O or format problems (`--json` switches stderr to a machine-readable
//! object).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::body::{pose_clothed_body, BodyModel, BodyShape, Pose};
use crate::datagen;
use crate::dataset::{validate_dataset, GeometryDataset, TextureDataset};
use crate::error::{invalid, Error, Result};
use crate::labeler::{build_color_prompt, encode_clothing_type, mock_text_encoder, ClothingType};
use crate::nets::{bind, rows_tensor, GeometryGenerator, TextureGenerator, LATENT_DIM};
use crate::trainer::{self, TextureStage, TrainConfig};
use crate::uv::{build_mask, TextureMap, UvAtlas};

/// Caps the worker pool from `SCULPT_THREADS`; outputs never depend on the
/// cap. Call once at startup.
pub fn configure_threads_from_env() {
    if let Ok(v) = std::env::var("SCULPT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sculpt",
    about = "Clothed, textured 3D human mesh generation pipeline",
    version
)]
pub struct Cli {
    /// Emit machine-readable JSON errors on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the built-in procedural toy body model (with its UV atlas).
    Toybody(ToybodyArgs),
    /// Unpose a directory of registered meshes into displacement maps.
    Unpose(UnposeArgs),
    /// Sample the generative model and export a textured mesh.
    Synth(SynthArgs),
    /// Render a textured OBJ to a PNG.
    Render(RenderArgs),
    /// Train the geometry generator (stage 1).
    TrainGeo(TrainGeoArgs),
    /// Train the texture generator against a frozen geometry network
    /// (stage 2).
    TrainTex(TrainTexArgs),
    /// Build a conditioning bundle from clothing type and colors.
    Label(LabelArgs),
    /// Generate a synthetic displacement-map dataset.
    DatagenGeo(DatagenGeoArgs),
    /// Generate a synthetic rendered-image dataset.
    DatagenTex(DatagenTexArgs),
    /// Validate a dataset directory.
    Validate(ValidateArgs),
    /// Emit the six ablation run configurations.
    Ablation(AblationArgs),
}

#[derive(Args, Debug)]
pub struct ToybodyArgs {
    /// Output directory for the model container.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct UnposeArgs {
    /// Body model container directory.
    #[arg(long)]
    pub model: PathBuf,
    /// UV atlas container (defaults to `<model>/atlas`).
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    /// Directory of OBJ registrations with JSON sidecars.
    #[arg(long)]
    pub reg_dir: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Displacement-map resolution.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Body model container directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Geometry generator checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Pose JSON file (`{"pose": [...], "root_orient": [...]}`).
    #[arg(long)]
    pub pose: PathBuf,
    /// Clothing type code 0-5.
    #[arg(long)]
    pub ctype: usize,
    /// Seed for the geometry latent.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output OBJ path (MTL and texture PNG land next to it).
    #[arg(long)]
    pub out: PathBuf,
    /// Texture generator checkpoint; without it the export uses a flat
    /// mid-gray texture.
    #[arg(long)]
    pub tex_ckpt: Option<PathBuf>,
    /// Upper-body color prompt word for the texture condition.
    #[arg(long, default_value = "gray")]
    pub upper: String,
    /// Lower-body color prompt word for the texture condition.
    #[arg(long, default_value = "gray")]
    pub lower: String,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Textured OBJ (needs vt records).
    #[arg(long)]
    pub mesh: PathBuf,
    /// Texture PNG.
    #[arg(long)]
    pub texture: PathBuf,
    /// Camera JSON; defaults to the frontal catalog camera.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Image size of the default camera.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct TrainGeoArgs {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Geometry dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (checkpoints, metrics.csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Body model container; defaults to the built-in toy body.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainTexArgs {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Texture dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (checkpoints, metrics.csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Frozen geometry generator checkpoint.
    #[arg(long)]
    pub geo_ckpt: PathBuf,
    /// Body model container; defaults to the built-in toy body.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    /// Upper-body clothing color.
    #[arg(long)]
    pub upper: String,
    /// Lower-body clothing color.
    #[arg(long)]
    pub lower: String,
    /// Clothing type code 0-5.
    #[arg(long)]
    pub ctype: usize,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DatagenGeoArgs {
    /// Number of samples.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of clothing modes (1-6).
    #[arg(long, default_value_t = 6)]
    pub modes: usize,
    /// Displacement-map resolution.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
}

#[derive(Args, Debug)]
pub struct DatagenTexArgs {
    /// Number of samples.
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated palette of lexicon colors.
    #[arg(long, default_value = "red,blue,green,yellow")]
    pub palette: String,
    /// Rendered image size.
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,
    /// Painted texture resolution.
    #[arg(long, default_value_t = 32)]
    pub texture_resolution: usize,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    /// Base run configuration JSON.
    #[arg(long)]
    pub base: PathBuf,
    /// Output directory for the six configs.
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command; the binary maps the error to an exit code.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toybody(args) => cmd_toybody(&args),
        Command::Unpose(args) => cmd_unpose(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Render(args) => cmd_render(&args),
        Command::TrainGeo(args) => cmd_train_geo(&args),
        Command::TrainTex(args) => cmd_train_tex(&args),
        Command::Label(args) => cmd_label(&args),
        Command::DatagenGeo(args) => cmd_datagen_geo(&args),
        Command::DatagenTex(args) => cmd_datagen_tex(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Ablation(args) => cmd_ablation(&args),
    }
}

fn load_model_and_atlas(model_dir: &Path, atlas: Option<&Path>) -> Result<(BodyModel, UvAtlas)> {
    let model = BodyModel::load(model_dir)?;
    let atlas = match atlas {
        Some(path) => UvAtlas::load(path)?,
        None => {
            let default = model_dir.join("atlas");
            if default.join("manifest.json").exists() {
                UvAtlas::load(&default)?
            } else {
                UvAtlas::from_vertex_uv(model.vertex_uv.clone(), &model.faces, 256)
            }
        }
    };
    if atlas.face_corner_uv.len() != model.faces.len() {
        return Err(Error::ModelFormat(
            "atlas face count differs from the model".into(),
        ));
    }
    Ok((model, atlas))
}

fn model_or_toy(model: Option<&Path>) -> Result<(BodyModel, UvAtlas)> {
    match model {
        Some(dir) => load_model_and_atlas(dir, None),
        None => Ok(datagen::make_toy_body()),
    }
}

fn cmd_toybody(args: &ToybodyArgs) -> Result<()> {
    let (model, atlas) = datagen::make_toy_body();
    model.save(&args.out)?;
    atlas.save(&args.out.join("atlas"))?;
    println!(
        "wrote toy body ({} vertices, {} joints) to {}",
        model.vertex_count(),
        model.joint_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_unpose(args: &UnposeArgs) -> Result<()> {
    let (model, atlas) = load_model_and_atlas(&args.model, args.atlas.as_deref())?;
    let report = crate::unpose::batch_unpose(
        &args.reg_dir,
        &args.out,
        &model,
        &atlas,
        args.resolution,
    )?;
    println!(
        "unposed {} registrations ({} failed) -> {}",
        report.processed, report.failed, report.index_path
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    pose: Vec<f64>,
    #[serde(default)]
    root_orient: Option<Vec<f64>>,
}

fn load_pose(path: &Path) -> Result<Pose> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file: PoseFile = serde_json::from_str(&text)?;
    let pose = Pose {
        body_pose: file.pose,
        root_orient: match file.root_orient {
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            Some(_) => return Err(invalid("root_orient must have 3 entries")),
            None => [0.0; 3],
        },
    };
    pose.validate()?;
    Ok(pose)
}

/// Loads a generator checkpoint: the embedded config drives the network
/// shape, then the weights load over it.
fn load_geometry_checkpoint(dir: &Path) -> Result<(GeometryGenerator, TrainConfig)> {
    let container = crate::container::Container::load(dir)?;
    let cfg_text = container
        .metadata
        .get("config")
        .ok_or_else(|| Error::CheckpointMismatch("checkpoint lacks config metadata".into()))?;
    let cfg: TrainConfig = serde_json::from_str(cfg_text)?;
    let mut generator = GeometryGenerator::new(cfg.net.clone(), 0)?;
    generator.params.load_checkpoint(dir)?;
    Ok((generator, cfg))
}

fn load_texture_checkpoint(dir: &Path) -> Result<(TextureGenerator, TrainConfig)> {
    let container = crate::container::Container::load(dir)?;
    let cfg_text = container
        .metadata
        .get("config")
        .ok_or_else(|| Error::CheckpointMismatch("checkpoint lacks config metadata".into()))?;
    let cfg: TrainConfig = serde_json::from_str(cfg_text)?;
    let mut generator = TextureGenerator::new(cfg.net.clone(), 0)?;
    generator.params.load_checkpoint(dir)?;
    Ok((generator, cfg))
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let (model, atlas) = load_model_and_atlas(&args.model, None)?;
    let (generator, cfg) = load_geometry_checkpoint(&args.ckpt)?;
    let pose = load_pose(&args.pose)?;
    model.check_pose(&pose)?;
    let clothing = ClothingType::from_code(args.ctype)?;
    let resolution = cfg.net.resolution;
    let mask = build_mask(&atlas, resolution)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let z: Vec<f64> = (0..LATENT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut tape = Tape::new();
    let bound = bind(&generator.params, &mut tape, false);
    let zt = tape.constant(&[1, LATENT_DIM], z.clone());
    let cg = rows_tensor(&mut tape, &[encode_clothing_type(clothing).to_vec()], false)?;
    let theta = rows_tensor(&mut tape, &[datagen::pose_condition_vector(&pose)], false)?;
    let (disp_t, feats) = generator.forward(&mut tape, &bound, zt, cg, theta, &mask)?;

    let map = crate::uv::DispMap {
        resolution,
        data: tape
            .value(disp_t)
            .iter()
            .map(|v| v * cfg.disp_scale)
            .collect(),
        mask,
    };
    let shape = BodyShape::neutral(model.shape_count());
    let mesh = pose_clothed_body(&model, &shape, &pose, &map, &atlas)?;

    let prompt = build_color_prompt(&args.upper, &args.lower)?;
    let texture = match &args.tex_ckpt {
        Some(dir) => {
            let (tex_gen, _) = load_texture_checkpoint(dir)?;
            let tb = bind(&tex_gen.params, &mut tape, false);
            let zt2: Vec<f64> = (0..LATENT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
            let zt2 = tape.constant(&[1, LATENT_DIM], zt2);
            let ct = rows_tensor(&mut tape, &[mock_text_encoder(&prompt.prompt)], false)?;
            let cg2 = rows_tensor(&mut tape, &[encode_clothing_type(clothing).to_vec()], false)?;
            let tex_t = tex_gen.forward(&mut tape, &tb, zt2, cg2, ct, Some(&feats))?;
            TextureMap {
                resolution,
                data: tape.value(tex_t).to_vec(),
            }
        }
        None => TextureMap::constant(resolution, [0.5, 0.5, 0.5]),
    };

    let stem = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into());
    let tex_name = format!("{stem}.png");
    let tex_path = args.out.with_file_name(&tex_name);
    // Texture PNG rows follow the raster convention; the OBJ vt records are
    // flipped on export to match.
    crate::imageio::save_rgb(&tex_path, &texture.data, resolution, resolution)?;
    crate::obj::export_obj(&args.out, &mesh, Some(&atlas), Some(&tex_name))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let mesh = crate::obj::import_obj(&args.mesh)?;
    let corner_uv = mesh.face_corner_uv.clone().ok_or_else(|| {
        Error::ModelFormat("mesh has no texture coordinates (vt records)".into())
    })?;
    let (tex_rgb, tw, th) = crate::imageio::load_rgb(&args.texture)?;
    if tw != th {
        return Err(Error::ModelFormat("texture must be square".into()));
    }
    let texture = TextureMap {
        resolution: tw,
        data: tex_rgb,
    };
    let camera = match &args.camera {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::IoPath {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => datagen::toy_camera(args.size),
    };
    let atlas = UvAtlas {
        vertex_uv: vec![[0.0, 0.0]; mesh.vertices.len()],
        face_corner_uv: corner_uv,
        resolution: tw,
    };
    let body_mesh = crate::body::ClothedMesh {
        vertices: mesh.vertices,
        faces: mesh.faces,
    };
    let out = crate::render::render(&body_mesh, &atlas, &texture, &camera, [1.0, 1.0, 1.0])?;
    crate::imageio::save_render(&args.out, &out)?;
    println!(
        "rendered {} ({} covered pixels)",
        args.out.display(),
        out.coverage()
    );
    Ok(())
}

fn cmd_train_geo(args: &TrainGeoArgs) -> Result<()> {
    let cfg = TrainConfig::load(&args.config)?;
    let (_, atlas) = model_or_toy(args.model.as_deref())?;
    let dataset = GeometryDataset::load(&args.data)?;
    let mask = build_mask(&atlas, cfg.net.resolution)?;
    let report = trainer::train_geometry(&cfg, &dataset, &mask, &args.out)?;
    println!(
        "trained {} steps; d_loss {:.4}, g_loss {:.4}, mask violations {} -> {}",
        report.steps,
        report.final_d_loss,
        report.final_g_loss,
        report.mask_violations,
        report.checkpoint_dir
    );
    Ok(())
}

fn cmd_train_tex(args: &TrainTexArgs) -> Result<()> {
    let cfg = TrainConfig::load(&args.config)?;
    let (model, atlas) = model_or_toy(args.model.as_deref())?;
    let dataset = TextureDataset::load(&args.data)?;
    let (geometry, geo_cfg) = load_geometry_checkpoint(&args.geo_ckpt)?;
    if geo_cfg.net != cfg.net {
        return Err(Error::CheckpointMismatch(
            "geometry checkpoint was trained with a different network config".into(),
        ));
    }
    let mask = build_mask(&atlas, cfg.net.resolution)?;
    let camera = datagen::toy_camera(cfg.image_size);
    let stage = TextureStage {
        geometry: &geometry,
        model: &model,
        atlas: &atlas,
        mask: &mask,
        camera: &camera,
    };
    let report = trainer::train_texture(&cfg, &stage, &dataset, &args.out)?;
    println!(
        "trained {} steps; d_loss {:.4}, g_loss {:.4} -> {}",
        report.steps, report.final_d_loss, report.final_g_loss, report.checkpoint_dir
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ConditionBundleFile {
    c_g: Vec<f64>,
    c_t: Vec<f64>,
    prompt: String,
    clothing_type: String,
}

fn cmd_label(args: &LabelArgs) -> Result<()> {
    let clothing = ClothingType::from_code(args.ctype)?;
    let prompt = build_color_prompt(&args.upper, &args.lower)?;
    let bundle = ConditionBundleFile {
        c_g: encode_clothing_type(clothing).to_vec(),
        c_t: mock_text_encoder(&prompt.prompt),
        prompt: prompt.prompt.clone(),
        clothing_type: clothing.name().to_string(),
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&bundle)?)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_datagen_geo(args: &DatagenGeoArgs) -> Result<()> {
    let (model, atlas) = datagen::make_toy_body();
    let dataset = datagen::synth_geometry_dataset(
        &model,
        &atlas,
        &args.out,
        args.count,
        args.modes,
        args.resolution,
        args.seed,
    )?;
    println!(
        "generated {} displacement maps -> {}",
        dataset.records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_datagen_tex(args: &DatagenTexArgs) -> Result<()> {
    let (model, atlas) = datagen::make_toy_body();
    let palette: Vec<String> = args
        .palette
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let dataset = datagen::synth_texture_dataset(
        &model,
        &atlas,
        &args.out,
        args.count,
        &palette,
        args.image_size,
        args.texture_resolution,
        args.seed,
    )?;
    println!(
        "generated {} rendered samples -> {}",
        dataset.records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let report = validate_dataset(&args.data)?;
    if report.ok() {
        println!("{} dataset: {} records, ok", report.kind, report.records);
        Ok(())
    } else {
        for p in &report.problems {
            eprintln!("{p}");
        }
        Err(Error::Validation(format!(
            "{} problems in {} records",
            report.problems.len(),
            report.records
        )))
    }
}

fn cmd_ablation(args: &AblationArgs) -> Result<()> {
    let base = TrainConfig::load(&args.base)?;
    let paths = trainer::write_ablation_configs(&base, &args.out)?;
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct JsonError {
    error: String,
    code: i32,
}

/// Binary entry point: parse, run, map errors to exit codes.
pub fn main_entry() -> i32 {
    configure_threads_from_env();
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            let code = err.exit_code();
            if json {
                let payload = JsonError {
                    error: err.to_string(),
                    code,
                };
                eprintln!(
                    "{}",
                    serde_json::to_string(&payload).unwrap_or_else(|_| err.to_string())
                );
            } else {
                eprintln!("error: {err}");
            }
            code
        }
    }
}
