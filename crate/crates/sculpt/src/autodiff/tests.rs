use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Keep magnitudes away from the leaky-relu kink so finite differences
    // stay valid.
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Central-difference gradient check: builds `loss = build(tape, inputs)`
/// from fresh leaves, compares analytic gradients against
/// `(f(x+e) - f(x-e)) / 2e` elementwise.
fn fd_check(
    shapes: &[&[usize]],
    seed: u64,
    tol: f64,
    build: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let datas: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| random_data(&mut rng, s.iter().product()))
        .collect();

    let eval = |datas: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = shapes
            .iter()
            .zip(datas)
            .map(|(s, d)| tape.leaf(s, d.clone()))
            .collect();
        let loss = build(&mut tape, &ids);
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = shapes
        .iter()
        .zip(&datas)
        .map(|(s, d)| tape.leaf(s, d.clone()))
        .collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.grad(loss, &ids, false).unwrap();

    let eps = 1e-6;
    for (which, data) in datas.iter().enumerate() {
        let analytic = tape.value(grads[which]).to_vec();
        // Scale-aware floor: tiny entries of a gradient whose norm is O(1)
        // carry cancellation noise, so relative error is taken against the
        // tensor's own scale.
        let grad_inf = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * grad_inf).max(1e-6);
        for i in 0..data.len() {
            let mut plus = datas.clone();
            plus[which][i] += eps;
            let mut minus = datas.clone();
            minus[which][i] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(floor);
            assert!(
                (analytic[i] - fd).abs() / denom < tol,
                "input {which} elem {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }
}

/// Random projection to a scalar so every output element participates.
fn project(tape: &mut Tape, x: TensorId, seed: u64) -> TensorId {
    let shape = tape.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rt = tape.constant(&shape, r);
    let prod = tape.mul(x, rt).unwrap();
    tape.sum(prod)
}

#[test]
fn fd_add_sub_mul_scale() {
    fd_check(&[&[3, 4], &[3, 4]], 1, 1e-6, |t, ids| {
        let s = t.add(ids[0], ids[1]).unwrap();
        project(t, s, 100)
    });
    fd_check(&[&[3, 4], &[3, 4]], 2, 1e-6, |t, ids| {
        let s = t.sub(ids[0], ids[1]).unwrap();
        project(t, s, 101)
    });
    fd_check(&[&[5, 2], &[5, 2]], 3, 1e-6, |t, ids| {
        let s = t.mul(ids[0], ids[1]).unwrap();
        project(t, s, 102)
    });
    fd_check(&[&[7]], 4, 1e-6, |t, ids| {
        let s = t.scale(ids[0], -1.7);
        let s = t.add_scalar(s, 0.3);
        project(t, s, 103)
    });
}

#[test]
fn fd_matmul_transpose() {
    fd_check(&[&[4, 3], &[3, 5]], 5, 1e-6, |t, ids| {
        let s = t.matmul(ids[0], ids[1]).unwrap();
        project(t, s, 104)
    });
    fd_check(&[&[4, 6]], 6, 1e-6, |t, ids| {
        let s = t.transpose(ids[0]).unwrap();
        project(t, s, 105)
    });
}

#[test]
fn fd_shape_ops() {
    fd_check(&[&[2, 6]], 7, 1e-6, |t, ids| {
        let s = t.reshape(ids[0], &[3, 4]).unwrap();
        project(t, s, 106)
    });
    fd_check(&[&[1, 4]], 8, 1e-6, |t, ids| {
        let s = t.broadcast(ids[0], &[5, 4]).unwrap();
        project(t, s, 107)
    });
    fd_check(&[&[5, 4]], 9, 1e-6, |t, ids| {
        let s = t.reduce_sum_to(ids[0], &[1, 4]).unwrap();
        project(t, s, 108)
    });
    fd_check(&[&[2, 3], &[2, 2]], 10, 1e-6, |t, ids| {
        let s = t.concat(&[ids[0], ids[1]], 1).unwrap();
        project(t, s, 109)
    });
    fd_check(&[&[3, 6]], 11, 1e-6, |t, ids| {
        let s = t.slice(ids[0], 1, 2, 3).unwrap();
        project(t, s, 110)
    });
    fd_check(&[&[3, 2]], 12, 1e-6, |t, ids| {
        let s = t.pad_zero(ids[0], 1, 1, 2).unwrap();
        project(t, s, 111)
    });
}

#[test]
fn fd_reductions_and_activations() {
    fd_check(&[&[3, 3]], 13, 1e-6, |t, ids| t.sum(ids[0]));
    fd_check(&[&[4, 2]], 14, 1e-6, |t, ids| t.mean(ids[0]));
    fd_check(&[&[6, 3]], 15, 1e-6, |t, ids| {
        let s = t.leaky_relu(ids[0]);
        project(t, s, 112)
    });
    fd_check(&[&[6, 3]], 16, 1e-6, |t, ids| {
        let s = t.sigmoid(ids[0]);
        project(t, s, 113)
    });
    fd_check(&[&[6, 3]], 17, 1e-6, |t, ids| {
        let s = t.softplus(ids[0]);
        project(t, s, 114)
    });
}

#[test]
fn fd_conv_family() {
    // Small shapes keep the projected loss O(10) so central differences at
    // eps = 1e-6 stay above f64 cancellation noise.
    fd_check(&[&[1, 3, 4, 2], &[3, 3, 2, 3]], 18, 1e-6, |t, ids| {
        let s = t.conv2d(ids[0], ids[1]).unwrap();
        project(t, s, 115)
    });
    fd_check(&[&[1, 3, 3, 3], &[3, 3, 2, 3]], 19, 1e-6, |t, ids| {
        let s = t.conv2d_igrad(ids[0], ids[1]).unwrap();
        project(t, s, 116)
    });
    fd_check(&[&[1, 3, 3, 2], &[1, 3, 3, 3]], 20, 1e-6, |t, ids| {
        let s = t.conv2d_wgrad(ids[0], ids[1]).unwrap();
        project(t, s, 117)
    });
}

#[test]
fn fd_resampling() {
    fd_check(&[&[2, 3, 4, 2]], 21, 1e-6, |t, ids| {
        let s = t.upsample2(ids[0]).unwrap();
        project(t, s, 118)
    });
    fd_check(&[&[2, 4, 6, 2]], 22, 1e-6, |t, ids| {
        let s = t.avg_pool2(ids[0]).unwrap();
        project(t, s, 119)
    });
}

/// For linear ops, `<f(d), g> == <d, f^T(g)>` holds to machine precision
/// because `f(d)` is computable exactly by a forward pass.
#[test]
fn adjoint_identities_for_linear_ops() {
    type BuildFn = fn(&mut Tape, TensorId) -> TensorId;
    let cases: Vec<(&str, Vec<usize>, BuildFn)> = vec![
        ("matmul", vec![4, 3], |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(900);
            let w = t.constant(&[3, 6], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect());
            t.matmul(x, w).unwrap()
        }),
        ("conv2d", vec![2, 4, 4, 3], |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(901);
            let w = t.constant(
                &[3, 3, 3, 5],
                (0..135).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            t.conv2d(x, w).unwrap()
        }),
        ("upsample2", vec![2, 3, 3, 4], |t, x| t.upsample2(x).unwrap()),
        ("pool_sum2", vec![2, 4, 4, 3], |t, x| t.pool_sum2(x).unwrap()),
        ("transpose", vec![5, 7], |t, x| t.transpose(x).unwrap()),
        ("slice", vec![4, 8], |t, x| t.slice(x, 1, 2, 5).unwrap()),
        ("pad", vec![4, 3], |t, x| t.pad_zero(x, 1, 2, 1).unwrap()),
        ("broadcast", vec![1, 6], |t, x| {
            t.broadcast(x, &[7, 6]).unwrap()
        }),
        ("reduce", vec![7, 6], |t, x| {
            t.reduce_sum_to(x, &[1, 6]).unwrap()
        }),
    ];
    for (name, shape, build) in cases {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let x = tape.leaf(&shape, delta.clone());
        let y = build(&mut tape, x);
        let f_delta = tape.value(y).to_vec();
        let g: Vec<f64> = (0..f_delta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let lhs: f64 = f_delta.iter().zip(&g).map(|(a, b)| a * b).sum();
        let grads = tape.grad_seeded(y, g, &[x], false).unwrap();
        let rhs: f64 = delta
            .iter()
            .zip(tape.value(grads[0]))
            .map(|(a, b)| a * b)
            .sum();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
            "{name}: <Jd,g>={lhs} vs <d,J^T g>={rhs}"
        );
    }
}

#[test]
fn conv_identity_kernel_preserves_input() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let x_data: Vec<f64> = (0..2 * 5 * 5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = tape.leaf(&[2, 5, 5, 3], x_data.clone());
    // Identity: center tap (ky=kx=1) passes channel i to output i.
    let mut w = vec![0.0; 9 * 3 * 3];
    for c in 0..3 {
        w[((1 * 3 + 1) * 3 + c) * 3 + c] = 1.0;
    }
    let wid = tape.constant(&[3, 3, 3, 3], w);
    let y = tape.conv2d(x, wid).unwrap();
    assert_eq!(tape.value(y), x_data.as_slice());
}

#[test]
fn leaky_relu_definition() {
    let mut tape = Tape::new();
    let x = tape.leaf(&[2], vec![-1.0, 2.0]);
    let y = tape.leaky_relu(x);
    assert_eq!(tape.value(y), &[-0.2, 2.0]);
}

#[test]
fn grad_of_sum_is_ones_and_constants_have_zero_grad() {
    let mut tape = Tape::new();
    let x = tape.leaf(&[3, 2], vec![1.0; 6]);
    let s = tape.sum(x);
    let g = tape.grad(s, &[x], false).unwrap();
    assert_eq!(tape.value(g[0]), &[1.0; 6]);

    // Constant loss: zero gradient.
    let c = tape.constant(&[1], vec![5.0]);
    let g = tape.grad(c, &[x], false).unwrap();
    assert_eq!(tape.value(g[0]), &[0.0; 6]);

    // Unreachable wrt: zero gradient, not an error.
    let y = tape.leaf(&[2], vec![1.0, 2.0]);
    let s2 = tape.sum(x);
    let g = tape.grad(s2, &[y], false).unwrap();
    assert_eq!(tape.value(g[0]), &[0.0, 0.0]);
}

#[test]
fn double_backward_of_quadratic_is_exact() {
    // f(x) = sum(x*x); df/dx = 2x; d2f/dx2 summed = 2 per element.
    let mut tape = Tape::new();
    let x = tape.leaf(&[4], vec![0.5, -1.5, 2.0, 3.0]);
    let sq = tape.mul(x, x).unwrap();
    let f = tape.sum(sq);
    let gx = tape.grad(f, &[x], true).unwrap()[0];
    for (g, v) in tape.value(gx).iter().zip([0.5, -1.5, 2.0, 3.0]) {
        assert!((g - 2.0 * v).abs() < 1e-12);
    }
    let gsum = tape.sum(gx);
    let ggx = tape.grad(gsum, &[x], false).unwrap()[0];
    for g in tape.value(ggx) {
        assert!((g - 2.0).abs() < 1e-9);
    }
}

/// R1-style double backward on a 2-layer discriminator, checked against
/// finite differences of the penalty with respect to every weight.
#[test]
fn r1_double_backward_matches_finite_differences() {
    let (din, dh) = (6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let w1: Vec<f64> = (0..din * dh).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let b1: Vec<f64> = (0..dh).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let w2: Vec<f64> = (0..dh).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let x: Vec<f64> = (0..2 * din).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // penalty(params) = 0.5 * mean_b ||d D(x_b) / d x_b||^2
    let penalty = |w1d: &[f64], b1d: &[f64], w2d: &[f64], create: bool| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut tape = Tape::new();
        let xi = tape.leaf(&[2, din], x.clone());
        let w1t = tape.leaf(&[din, dh], w1d.to_vec());
        let b1t = tape.leaf(&[1, dh], b1d.to_vec());
        let w2t = tape.leaf(&[dh, 1], w2d.to_vec());
        let h = tape.matmul(xi, w1t).unwrap();
        let bb = tape.broadcast(b1t, &[2, dh]).unwrap();
        let h = tape.add(h, bb).unwrap();
        let h = tape.leaky_relu(h);
        let logits = tape.matmul(h, w2t).unwrap();
        let s = tape.sum(logits);
        let gx = tape.grad(s, &[xi], true).unwrap()[0];
        let sq = tape.mul(gx, gx).unwrap();
        let total = tape.sum(sq);
        let pen = tape.scale(total, 0.5 / 2.0);
        if !create {
            return (tape.scalar(pen), None);
        }
        let grads = tape.grad(pen, &[w1t, b1t, w2t], false).unwrap();
        let gv = grads.iter().map(|&g| tape.value(g).to_vec()).collect();
        (tape.scalar(pen), Some(gv))
    };

    let (_, grads) = penalty(&w1, &b1, &w2, true);
    let grads = grads.unwrap();

    let eps = 1e-5;
    let params: [&[f64]; 3] = [&w1, &b1, &w2];
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.len() {
            let perturb = |delta: f64| {
                let mut w1p = w1.clone();
                let mut b1p = b1.clone();
                let mut w2p = w2.clone();
                match pi {
                    0 => w1p[i] += delta,
                    1 => b1p[i] += delta,
                    _ => w2p[i] += delta,
                }
                penalty(&w1p, &b1p, &w2p, false).0
            };
            let fd = (perturb(eps) - perturb(-eps)) / (2.0 * eps);
            let analytic = grads[pi][i];
            let denom = fd.abs().max(analytic.abs()).max(1e-4);
            assert!(
                (analytic - fd).abs() / denom < 1e-4,
                "param {pi} elem {i}: analytic {analytic} vs fd {fd}"
            );
        }
    }
}

#[test]
fn replay_is_bit_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = tape.leaf(&[4, 8, 8, 3], (0..4 * 8 * 8 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = tape.leaf(&[3, 3, 3, 6], (0..9 * 18).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let y = tape.conv2d(x, w).unwrap();
        let y = tape.leaky_relu(y);
        let p = tape.avg_pool2(y).unwrap();
        let loss = tape.mean(p);
        let grads = tape.grad(loss, &[x, w], false).unwrap();
        (
            tape.scalar(loss).to_bits(),
            tape.value(grads[0]).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(&[2, 3], vec![0.0; 6]);
    let b = tape.leaf(&[3, 2], vec![0.0; 6]);
    match tape.add(a, b) {
        Err(crate::error::Error::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![3, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn detach_blocks_gradients() {
    let mut tape = Tape::new();
    let x = tape.leaf(&[3], vec![1.0, 2.0, 3.0]);
    let d = tape.detach(x);
    let s = tape.sum(d);
    let g = tape.grad(s, &[x], false).unwrap();
    assert_eq!(tape.value(g[0]), &[0.0; 3]);
}
