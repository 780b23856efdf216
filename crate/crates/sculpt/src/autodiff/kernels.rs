//! Dense kernels behind the tape ops: row-major GEMM variants and the
//! im2col gather for 3x3 same-padding convolutions.
//!
//! All parallel kernels partition output disjointly or reduce over a fixed
//! chunk count, so results are bitwise identical for any worker-pool size.

use rayon::prelude::*;

use super::simd;

/// Reference row-block kernel: 4 output rows at a time so each streamed row
/// of `b` feeds four accumulator rows held in cache.
fn gemm_rows_portable(rows: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut i = 0;
    while i + 4 <= rows {
        let (head, tail) = out.split_at_mut((i + 1) * n);
        let (o0, rest) = (&mut head[i * n..], tail);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3rest) = rest.split_at_mut(n);
        let o3 = &mut o3rest[..n];
        o0.fill(0.0);
        o1.fill(0.0);
        o2.fill(0.0);
        o3.fill(0.0);
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let (v0, v1, v2, v3) = (a0[j], a1[j], a2[j], a3[j]);
            for c in 0..n {
                let bv = brow[c];
                o0[c] += v0 * bv;
                o1[c] += v1 * bv;
                o2[c] += v2 * bv;
                o3[c] += v3 * bv;
            }
        }
        i += 4;
    }
    while i < rows {
        let orow = &mut out[i * n..(i + 1) * n];
        orow.fill(0.0);
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..k {
            let v = arow[j];
            let brow = &b[j * n..(j + 1) * n];
            for c in 0..n {
                orow[c] += v * brow[c];
            }
        }
        i += 1;
    }
}

fn gemm_rows(rows: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    if !simd::gemm_rows_dispatch(rows, k, n, a, b, out) {
        gemm_rows_portable(rows, k, n, a, b, out);
    }
}

/// `out[m,n] = a[m,k] * b[k,n]`, row-major. Output rows are partitioned
/// disjointly across workers.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let row_block = 128usize;
    if m <= row_block {
        gemm_rows(m, k, n, a, b, out);
        return;
    }
    out.par_chunks_mut(row_block * n)
        .zip(a.par_chunks(row_block * k))
        .for_each(|(oc, ac)| {
            gemm_rows(oc.len() / n, k, n, ac, b, oc);
        });
}

/// `out[p,n] = a[m,p]^T * b[m,n]`, row-major. The reduction over `m` runs in
/// a fixed number of chunks whose partial products fold in chunk order,
/// independent of thread count. Each chunk transposes its slice of `a` and
/// reuses the row kernel.
pub fn gemm_tn(m: usize, p: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), p * n);
    out.fill(0.0);
    if m == 0 {
        return;
    }
    const CHUNKS: usize = 8;
    let chunk_rows = m.div_ceil(CHUNKS);
    let partials: Vec<Vec<f64>> = (0..CHUNKS)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk_rows;
            let hi = ((ci + 1) * chunk_rows).min(m);
            let mut local = vec![0.0; p * n];
            if lo >= hi {
                return local;
            }
            if !simd::gemm_tn_dispatch(lo, hi, p, n, a, b, &mut local) {
                let rows = hi - lo;
                let mut at = vec![0.0; p * rows];
                for r in 0..rows {
                    for c in 0..p {
                        at[c * rows + r] = a[(lo + r) * p + c];
                    }
                }
                gemm_rows(p, rows, n, &at, &b[lo * n..hi * n], &mut local);
            }
            local
        })
        .collect();
    for local in partials {
        for (o, l) in out.iter_mut().zip(&local) {
            *o += l;
        }
    }
}

/// Gathers 3x3 same-padding patches of a channels-last image batch:
/// input `[batch, h, w, c]` becomes `[batch*h*w, 9*c]` with tap order
/// `(ky, kx, c)`. Out-of-bounds taps are zero.
pub fn im2col_3x3(batch: usize, h: usize, w: usize, c: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), batch * h * w * c);
    debug_assert_eq!(out.len(), batch * h * w * 9 * c);
    let row_len = 9 * c;
    out.par_chunks_mut(h * w * row_len)
        .enumerate()
        .for_each(|(b, ob)| {
            for y in 0..h {
                for xx in 0..w {
                    let orow = &mut ob[(y * w + xx) * row_len..(y * w + xx + 1) * row_len];
                    for ky in 0..3usize {
                        let sy = y as isize + ky as isize - 1;
                        for kx in 0..3usize {
                            let sx = xx as isize + kx as isize - 1;
                            let dst = &mut orow[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                            if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                dst.fill(0.0);
                            } else {
                                let src = ((b * h + sy as usize) * w + sx as usize) * c;
                                dst.copy_from_slice(&x[src..src + c]);
                            }
                        }
                    }
                }
            }
        });
}

/// Nearest-neighbor 2x upsample of a channels-last batch.
pub fn upsample2(batch: usize, h: usize, w: usize, c: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), batch * 4 * h * w * c);
    let (oh, ow) = (2 * h, 2 * w);
    for b in 0..batch {
        for y in 0..h {
            // Build one doubled row, then write it to both output rows.
            let src = &x[((b * h + y) * w) * c..((b * h + y) * w + w) * c];
            let row0 = ((b * oh + 2 * y) * ow) * c;
            for xx in 0..w {
                let chunk = &src[xx * c..(xx + 1) * c];
                out[row0 + 2 * xx * c..row0 + (2 * xx + 1) * c].copy_from_slice(chunk);
                out[row0 + (2 * xx + 1) * c..row0 + (2 * xx + 2) * c].copy_from_slice(chunk);
            }
            let (head, tail) = out.split_at_mut(row0 + ow * c);
            tail[..ow * c].copy_from_slice(&head[row0..]);
        }
    }
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn pool_sum2(batch: usize, h: usize, w: usize, c: usize, x: &[f64], out: &mut [f64]) {
    // h, w are the *input* dimensions and must be even.
    debug_assert_eq!(x.len(), batch * h * w * c);
    debug_assert_eq!(out.len(), batch * h * w * c / 4);
    let (oh, ow) = (h / 2, w / 2);
    for b in 0..batch {
        for y in 0..oh {
            for xx in 0..ow {
                let dst = ((b * oh + y) * ow + xx) * c;
                for ch in 0..c {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += x[((b * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch];
                        }
                    }
                    out[dst + ch] = acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..k {
                for c in 0..n {
                    out[i * n + c] += a[i * k + j] * b[j * n + c];
                }
            }
        }
        out
    }

    #[test]
    fn gemm_nn_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (m, k, n) in [(1, 1, 1), (5, 7, 3), (13, 4, 9), (130, 33, 17)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut out);
            let want = naive_gemm(m, k, n, &a, &b);
            for (x, y) in out.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_tn_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (m, p, n) in [(1, 1, 1), (9, 5, 4), (64, 18, 6), (200, 36, 48)] {
            let a: Vec<f64> = (0..m * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; p * n];
            gemm_tn(m, p, n, &a, &b, &mut out);
            // a^T b = naive with transposed a.
            let mut at = vec![0.0; p * m];
            for i in 0..m {
                for j in 0..p {
                    at[j * m + i] = a[i * p + j];
                }
            }
            let want = naive_gemm(p, m, n, &at, &b);
            for (x, y) in out.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "({m},{p},{n})");
            }
        }
    }

    #[test]
    fn im2col_gathers_neighborhoods() {
        // 1 batch, 3x3 image, 2 channels; verify center pixel row.
        let (h, w, c) = (3, 3, 2);
        let x: Vec<f64> = (0..h * w * c).map(|i| i as f64).collect();
        let mut out = vec![0.0; h * w * 9 * c];
        im2col_3x3(1, h, w, c, &x, &mut out);
        let center = &out[(1 * w + 1) * 9 * c..(1 * w + 2) * 9 * c];
        // Tap (0,0) = pixel (0,0) channels [0,1]; tap (2,2) = pixel (2,2).
        assert_eq!(&center[0..2], &x[0..2]);
        assert_eq!(&center[16..18], &x[16..18]);
        // Corner pixel (0,0): taps off the top/left are zero.
        let corner = &out[0..9 * c];
        assert_eq!(&corner[0..2], &[0.0, 0.0]);
        assert_eq!(&corner[8..10], &x[0..2]); // tap (1,1) = pixel itself
    }

    #[test]
    fn upsample_pool_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, h, w, c) = (2, 4, 6, 3);
        let x: Vec<f64> = (0..b * h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..b * 4 * h * w * c)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut up = vec![0.0; b * 4 * h * w * c];
        upsample2(b, h, w, c, &x, &mut up);
        let mut pooled = vec![0.0; b * h * w * c];
        pool_sum2(b, 2 * h, 2 * w, c, &g, &mut pooled);
        let lhs: f64 = up.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&pooled).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
