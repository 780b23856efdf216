//! Throughput probe for the dense kernels driving training.

use std::time::Instant;

use sculpt::autodiff::{gemm_nn, gemm_tn};

fn main() {
    // Shapes that dominate a desk-scale training step (batch 8 at 32x32).
    let nn_cases = [
        (8 * 1024, 576, 48, "conv L3 fwd"),
        (8 * 256, 864, 64, "conv L2 fwd"),
        (8 * 4096, 171, 48, "disc 64px fwd"),
        (8, 592, 512, "mapping"),
    ];
    for (m, k, n, label) in nn_cases {
        let a = vec![1.0f64; m * k];
        let b = vec![1.0f64; k * n];
        let mut out = vec![0.0f64; m * n];
        let t0 = Instant::now();
        let mut reps = 0;
        while t0.elapsed().as_secs_f64() < 0.5 {
            gemm_nn(m, k, n, &a, &b, &mut out);
            reps += 1;
        }
        let secs = t0.elapsed().as_secs_f64();
        let gflops = 2.0 * (m * k * n) as f64 * reps as f64 / secs / 1e9;
        println!("gemm_nn {label:>14} m={m:<6} k={k:<4} n={n:<4} {gflops:7.2} GF/s");
    }
    let tn_cases = [
        (8 * 1024, 576, 48, "conv L3 wgrad"),
        (8 * 256, 864, 64, "conv L2 wgrad"),
    ];
    for (m, p, n, label) in tn_cases {
        let a = vec![1.0f64; m * p];
        let b = vec![1.0f64; m * n];
        let mut out = vec![0.0f64; p * n];
        let t0 = Instant::now();
        let mut reps = 0;
        while t0.elapsed().as_secs_f64() < 0.5 {
            gemm_tn(m, p, n, &a, &b, &mut out);
            reps += 1;
        }
        let secs = t0.elapsed().as_secs_f64();
        let gflops = 2.0 * (m * p * n) as f64 * reps as f64 / secs / 1e9;
        println!("gemm_tn {label:>14} m={m:<6} p={p:<4} n={n:<4} {gflops:7.2} GF/s");
    }
}
