//! Times desk-scale training steps for budgeting long runs.

use std::time::Instant;

use sculpt::datagen::{make_toy_body, synth_geometry_dataset, synth_texture_dataset, toy_camera};
use sculpt::nets::GeometryGenerator;
use sculpt::trainer::{train_geometry, train_texture, TextureStage, TrainConfig};
use sculpt::uv::build_mask;

fn main() {
    let (model, atlas) = make_toy_body();
    let tmp = tempfile::tempdir().unwrap();

    let cfg = TrainConfig {
        steps: 6,
        seed: 1,
        metric_every: 0,
        ..TrainConfig::default()
    };

    let geo_data = tmp.path().join("geo");
    let ds = synth_geometry_dataset(&model, &atlas, &geo_data, 16, 2, cfg.net.resolution, 2).unwrap();
    let mask = build_mask(&atlas, cfg.net.resolution).unwrap();
    let t0 = Instant::now();
    let out = tmp.path().join("geo_run");
    train_geometry(&cfg, &ds, &mask, &out).unwrap();
    let per = t0.elapsed().as_secs_f64() / cfg.steps as f64;
    println!("geometry step: {per:.3} s  -> 2000 steps ~ {:.1} min", per * 2000.0 / 60.0);

    let tex_data = tmp.path().join("tex");
    let palette = vec!["red".to_string(), "blue".to_string()];
    let tds = synth_texture_dataset(&model, &atlas, &tex_data, 16, &palette, cfg.image_size, cfg.net.resolution, 3).unwrap();
    let geometry = GeometryGenerator::new(cfg.net.clone(), 11).unwrap();
    let camera = toy_camera(cfg.image_size);
    let stage = TextureStage {
        geometry: &geometry,
        model: &model,
        atlas: &atlas,
        mask: &mask,
        camera: &camera,
    };
    let t0 = Instant::now();
    let out = tmp.path().join("tex_run");
    train_texture(&cfg, &stage, &tds, &out).unwrap();
    let per = t0.elapsed().as_secs_f64() / cfg.steps as f64;
    println!("texture step:  {per:.3} s  -> 2000 steps ~ {:.1} min", per * 2000.0 / 60.0);
}
