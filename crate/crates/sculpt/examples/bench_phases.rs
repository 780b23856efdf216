//! Phase timing for one geometry training step equivalent.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sculpt::autodiff::Tape;
use sculpt::datagen::make_toy_body;
use sculpt::nets::{bind, rows_tensor, Discriminator, DiscriminatorConfig, GeneratorConfig, GeometryGenerator, LATENT_DIM};
use sculpt::trainer::{nonsat_d_loss, nonsat_g_loss, r1_penalty_from_logits};
use sculpt::uv::build_mask;

fn main() {
    let (_, atlas) = make_toy_body();
    let cfg = GeneratorConfig::desk();
    let mask = build_mask(&atlas, cfg.resolution).unwrap();
    let gen = GeometryGenerator::new(cfg.clone(), 1).unwrap();
    let disc = Discriminator::new(DiscriminatorConfig::new(cfg.resolution, 75), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = 8;
    let z: Vec<Vec<f64>> = (0..b).map(|_| (0..LATENT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let cg: Vec<Vec<f64>> = (0..b).map(|_| { let mut v = vec![0.0; 6]; v[0] = 1.0; v }).collect();
    let th: Vec<Vec<f64>> = (0..b).map(|_| vec![0.1; 69]).collect();
    let cond: Vec<Vec<f64>> = (0..b).map(|_| vec![0.1; 75]).collect();
    let real: Vec<f64> = (0..b * 32 * 32 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let reps = 10;
    let time = |label: &str, f: &mut dyn FnMut()| {
        let t0 = Instant::now();
        for _ in 0..reps { f(); }
        println!("{label:>28}: {:6.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    };

    time("G forward (no grad)", &mut || {
        let mut tape = Tape::new();
        let gb = bind(&gen.params, &mut tape, false);
        let zt = rows_tensor(&mut tape, &z, false).unwrap();
        let cgt = rows_tensor(&mut tape, &cg, false).unwrap();
        let tht = rows_tensor(&mut tape, &th, false).unwrap();
        let _ = gen.forward(&mut tape, &gb, zt, cgt, tht, &mask).unwrap();
    });
    time("G fwd+bwd (G step core)", &mut || {
        let mut tape = Tape::new();
        let gb = bind(&gen.params, &mut tape, true);
        let zt = rows_tensor(&mut tape, &z, false).unwrap();
        let cgt = rows_tensor(&mut tape, &cg, false).unwrap();
        let tht = rows_tensor(&mut tape, &th, false).unwrap();
        let (fake, _) = gen.forward(&mut tape, &gb, zt, cgt, tht, &mask).unwrap();
        let db = bind(&disc.params, &mut tape, false);
        let ct = rows_tensor(&mut tape, &cond, false).unwrap();
        let l = disc.forward(&mut tape, &db, fake, ct).unwrap();
        let g = nonsat_g_loss(&mut tape, l);
        let _ = tape.grad(g, &gb.ids, false).unwrap();
    });
    time("D step core (fwd+R1+bwd)", &mut || {
        let mut tape = Tape::new();
        let gb = bind(&gen.params, &mut tape, false);
        let zt = rows_tensor(&mut tape, &z, false).unwrap();
        let cgt = rows_tensor(&mut tape, &cg, false).unwrap();
        let tht = rows_tensor(&mut tape, &th, false).unwrap();
        let (fake, _) = gen.forward(&mut tape, &gb, zt, cgt, tht, &mask).unwrap();
        let rl_leaf = tape.leaf(&[b, 32, 32, 3], real.clone());
        let db = bind(&disc.params, &mut tape, true);
        let ct = rows_tensor(&mut tape, &cond, false).unwrap();
        let rl = disc.forward(&mut tape, &db, rl_leaf, ct).unwrap();
        let fl = disc.forward(&mut tape, &db, fake, ct).unwrap();
        let dm = nonsat_d_loss(&mut tape, rl, fl).unwrap();
        let r1 = r1_penalty_from_logits(&mut tape, rl, rl_leaf, 1.0).unwrap();
        let dt = tape.add(dm, r1).unwrap();
        let _ = tape.grad(dt, &db.ids, false).unwrap();
    });
}
