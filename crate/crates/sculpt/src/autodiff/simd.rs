//! SIMD microkernels for the GEMM inner loops, with runtime dispatch.
//!
//! The portable paths in `kernels.rs` stay the reference implementation;
//! these register-blocked variants (4 output rows x 16 columns held in
//! registers across the k loop) are selected when the CPU supports them.
//! Dispatch depends only on the CPU, never on thread count, so results are
//! reproducible on a given machine.

#[cfg(target_arch = "x86_64")]
pub fn gemm_rows_dispatch(
    rows: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) -> bool {
    if is_x86_feature_detected!("avx512f") {
        unsafe { gemm_rows_avx512(rows, k, n, a, b, out) };
        true
    } else if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
        unsafe { gemm_rows_avx2(rows, k, n, a, b, out) };
        true
    } else {
        false
    }
}

#[cfg(not(target_arch = "x86_64"))]
pub fn gemm_rows_dispatch(
    _rows: usize,
    _k: usize,
    _n: usize,
    _a: &[f64],
    _b: &[f64],
    _out: &mut [f64],
) -> bool {
    false
}

/// `out[p,n] += a[m,p]^T * b[m,n]` over rows `lo..hi` of `a`/`b`.
#[cfg(target_arch = "x86_64")]
pub fn gemm_tn_dispatch(
    lo: usize,
    hi: usize,
    p: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) -> bool {
    if is_x86_feature_detected!("avx512f") {
        unsafe { gemm_tn_avx512(lo, hi, p, n, a, b, out) };
        true
    } else if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
        unsafe { gemm_tn_avx2(lo, hi, p, n, a, b, out) };
        true
    } else {
        false
    }
}

#[cfg(not(target_arch = "x86_64"))]
pub fn gemm_tn_dispatch(
    _lo: usize,
    _hi: usize,
    _p: usize,
    _n: usize,
    _a: &[f64],
    _b: &[f64],
    _out: &mut [f64],
) -> bool {
    false
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_tn_avx512(
    lo: usize,
    hi: usize,
    p: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    use std::arch::x86_64::*;
    let mut c = 0;
    while c + 16 <= n {
        let mut pi = 0;
        while pi + 4 <= p {
            let mut acc00 = _mm512_setzero_pd();
            let mut acc01 = _mm512_setzero_pd();
            let mut acc10 = _mm512_setzero_pd();
            let mut acc11 = _mm512_setzero_pd();
            let mut acc20 = _mm512_setzero_pd();
            let mut acc21 = _mm512_setzero_pd();
            let mut acc30 = _mm512_setzero_pd();
            let mut acc31 = _mm512_setzero_pd();
            for r in lo..hi {
                let arow = a.as_ptr().add(r * p + pi);
                let b0 = _mm512_loadu_pd(b.as_ptr().add(r * n + c));
                let b1 = _mm512_loadu_pd(b.as_ptr().add(r * n + c + 8));
                let v0 = _mm512_set1_pd(*arow);
                let v1 = _mm512_set1_pd(*arow.add(1));
                let v2 = _mm512_set1_pd(*arow.add(2));
                let v3 = _mm512_set1_pd(*arow.add(3));
                acc00 = _mm512_fmadd_pd(v0, b0, acc00);
                acc01 = _mm512_fmadd_pd(v0, b1, acc01);
                acc10 = _mm512_fmadd_pd(v1, b0, acc10);
                acc11 = _mm512_fmadd_pd(v1, b1, acc11);
                acc20 = _mm512_fmadd_pd(v2, b0, acc20);
                acc21 = _mm512_fmadd_pd(v2, b1, acc21);
                acc30 = _mm512_fmadd_pd(v3, b0, acc30);
                acc31 = _mm512_fmadd_pd(v3, b1, acc31);
            }
            let store = |o: &mut [f64], off: usize, v: __m512d| {
                let cur = _mm512_loadu_pd(o.as_ptr().add(off));
                _mm512_storeu_pd(o.as_mut_ptr().add(off), _mm512_add_pd(cur, v));
            };
            store(out, pi * n + c, acc00);
            store(out, pi * n + c + 8, acc01);
            store(out, (pi + 1) * n + c, acc10);
            store(out, (pi + 1) * n + c + 8, acc11);
            store(out, (pi + 2) * n + c, acc20);
            store(out, (pi + 2) * n + c + 8, acc21);
            store(out, (pi + 3) * n + c, acc30);
            store(out, (pi + 3) * n + c + 8, acc31);
            pi += 4;
        }
        while pi < p {
            gemm_tn_tail(lo, hi, pi, c, c + 16, p, n, a, b, out);
            pi += 1;
        }
        c += 16;
    }
    if c < n {
        for pi in 0..p {
            gemm_tn_tail(lo, hi, pi, c, n, p, n, a, b, out);
        }
    }
}

/// Tail for one output row of the transposed product: stream the `a`
/// column as broadcasts, keep up to 16 accumulators on the stack.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm_tn_tail(
    lo: usize,
    hi: usize,
    pi: usize,
    c0: usize,
    c1: usize,
    p: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    let width = c1 - c0;
    debug_assert!(width <= 16);
    let mut acc = [0.0f64; 16];
    for r in lo..hi {
        let av = a[r * p + pi];
        if av == 0.0 {
            continue;
        }
        let brow = &b[r * n + c0..r * n + c1];
        for (slot, &bv) in acc[..width].iter_mut().zip(brow) {
            *slot += av * bv;
        }
    }
    for (i, &v) in acc[..width].iter().enumerate() {
        out[pi * n + c0 + i] += v;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_tn_avx2(
    lo: usize,
    hi: usize,
    p: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    use std::arch::x86_64::*;
    let mut c = 0;
    while c + 8 <= n {
        let mut pi = 0;
        while pi + 4 <= p {
            let mut acc00 = _mm256_setzero_pd();
            let mut acc01 = _mm256_setzero_pd();
            let mut acc10 = _mm256_setzero_pd();
            let mut acc11 = _mm256_setzero_pd();
            let mut acc20 = _mm256_setzero_pd();
            let mut acc21 = _mm256_setzero_pd();
            let mut acc30 = _mm256_setzero_pd();
            let mut acc31 = _mm256_setzero_pd();
            for r in lo..hi {
                let arow = a.as_ptr().add(r * p + pi);
                let b0 = _mm256_loadu_pd(b.as_ptr().add(r * n + c));
                let b1 = _mm256_loadu_pd(b.as_ptr().add(r * n + c + 4));
                let v0 = _mm256_set1_pd(*arow);
                let v1 = _mm256_set1_pd(*arow.add(1));
                let v2 = _mm256_set1_pd(*arow.add(2));
                let v3 = _mm256_set1_pd(*arow.add(3));
                acc00 = _mm256_fmadd_pd(v0, b0, acc00);
                acc01 = _mm256_fmadd_pd(v0, b1, acc01);
                acc10 = _mm256_fmadd_pd(v1, b0, acc10);
                acc11 = _mm256_fmadd_pd(v1, b1, acc11);
                acc20 = _mm256_fmadd_pd(v2, b0, acc20);
                acc21 = _mm256_fmadd_pd(v2, b1, acc21);
                acc30 = _mm256_fmadd_pd(v3, b0, acc30);
                acc31 = _mm256_fmadd_pd(v3, b1, acc31);
            }
            let store = |o: &mut [f64], off: usize, v: __m256d| {
                let cur = _mm256_loadu_pd(o.as_ptr().add(off));
                _mm256_storeu_pd(o.as_mut_ptr().add(off), _mm256_add_pd(cur, v));
            };
            store(out, pi * n + c, acc00);
            store(out, pi * n + c + 4, acc01);
            store(out, (pi + 1) * n + c, acc10);
            store(out, (pi + 1) * n + c + 4, acc11);
            store(out, (pi + 2) * n + c, acc20);
            store(out, (pi + 2) * n + c + 4, acc21);
            store(out, (pi + 3) * n + c, acc30);
            store(out, (pi + 3) * n + c + 4, acc31);
            pi += 4;
        }
        while pi < p {
            gemm_tn_tail(lo, hi, pi, c, c + 8, p, n, a, b, out);
            pi += 1;
        }
        c += 8;
    }
    if c < n {
        for pi in 0..p {
            gemm_tn_tail(lo, hi, pi, c, n, p, n, a, b, out);
        }
    }
}

/// `out[rows,n] = a[rows,k] * b[k,n]` with 4x16 register tiles (AVX-512).
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_rows_avx512(rows: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    use std::arch::x86_64::*;
    out.fill(0.0);
    let mut i = 0;
    while i + 4 <= rows {
        let a0 = a.as_ptr().add(i * k);
        let a1 = a.as_ptr().add((i + 1) * k);
        let a2 = a.as_ptr().add((i + 2) * k);
        let a3 = a.as_ptr().add((i + 3) * k);
        let mut c = 0;
        while c + 16 <= n {
            let mut acc00 = _mm512_setzero_pd();
            let mut acc01 = _mm512_setzero_pd();
            let mut acc10 = _mm512_setzero_pd();
            let mut acc11 = _mm512_setzero_pd();
            let mut acc20 = _mm512_setzero_pd();
            let mut acc21 = _mm512_setzero_pd();
            let mut acc30 = _mm512_setzero_pd();
            let mut acc31 = _mm512_setzero_pd();
            for j in 0..k {
                let b0 = _mm512_loadu_pd(b.as_ptr().add(j * n + c));
                let b1 = _mm512_loadu_pd(b.as_ptr().add(j * n + c + 8));
                let v0 = _mm512_set1_pd(*a0.add(j));
                let v1 = _mm512_set1_pd(*a1.add(j));
                let v2 = _mm512_set1_pd(*a2.add(j));
                let v3 = _mm512_set1_pd(*a3.add(j));
                acc00 = _mm512_fmadd_pd(v0, b0, acc00);
                acc01 = _mm512_fmadd_pd(v0, b1, acc01);
                acc10 = _mm512_fmadd_pd(v1, b0, acc10);
                acc11 = _mm512_fmadd_pd(v1, b1, acc11);
                acc20 = _mm512_fmadd_pd(v2, b0, acc20);
                acc21 = _mm512_fmadd_pd(v2, b1, acc21);
                acc30 = _mm512_fmadd_pd(v3, b0, acc30);
                acc31 = _mm512_fmadd_pd(v3, b1, acc31);
            }
            _mm512_storeu_pd(out.as_mut_ptr().add(i * n + c), acc00);
            _mm512_storeu_pd(out.as_mut_ptr().add(i * n + c + 8), acc01);
            _mm512_storeu_pd(out.as_mut_ptr().add((i + 1) * n + c), acc10);
            _mm512_storeu_pd(out.as_mut_ptr().add((i + 1) * n + c + 8), acc11);
            _mm512_storeu_pd(out.as_mut_ptr().add((i + 2) * n + c), acc20);
            _mm512_storeu_pd(out.as_mut_ptr().add((i + 2) * n + c + 8), acc21);
            _mm512_storeu_pd(out.as_mut_ptr().add((i + 3) * n + c), acc30);
            _mm512_storeu_pd(out.as_mut_ptr().add((i + 3) * n + c + 8), acc31);
            c += 16;
        }
        // Column remainder: j-outer accumulation so each b row is read
        // once, contiguously.
        if c < n {
            gemm_rows_tail(4, i, c, k, n, a, b, out);
        }
        i += 4;
    }
    // Row remainder, one row at a time with 8-wide columns.
    while i < rows {
        let ar = a.as_ptr().add(i * k);
        let mut c = 0;
        while c + 8 <= n {
            let mut acc = _mm512_setzero_pd();
            for j in 0..k {
                let bv = _mm512_loadu_pd(b.as_ptr().add(j * n + c));
                acc = _mm512_fmadd_pd(_mm512_set1_pd(*ar.add(j)), bv, acc);
            }
            _mm512_storeu_pd(out.as_mut_ptr().add(i * n + c), acc);
            c += 8;
        }
        if c < n {
            gemm_rows_tail(1, i, c, k, n, a, b, out);
        }
        i += 1;
    }
}

/// Narrow-column tail: accumulators live on the stack, `b` rows stream
/// once. Covers up to 16 trailing columns for `nrows` consecutive rows.
#[inline]
fn gemm_rows_tail(
    nrows: usize,
    row0: usize,
    c0: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    let width = n - c0;
    debug_assert!(width <= 16);
    for r in row0..row0 + nrows {
        let arow = &a[r * k..(r + 1) * k];
        let mut acc = [0.0f64; 16];
        for (j, &av) in arow.iter().enumerate() {
            let brow = &b[j * n + c0..j * n + n];
            for (slot, &bv) in acc[..width].iter_mut().zip(brow) {
                *slot += av * bv;
            }
        }
        out[r * n + c0..r * n + n].copy_from_slice(&acc[..width]);
    }
}

/// Same tiling with 4x8 tiles (AVX2 + FMA).
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_rows_avx2(rows: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    use std::arch::x86_64::*;
    out.fill(0.0);
    let mut i = 0;
    while i + 4 <= rows {
        let a0 = a.as_ptr().add(i * k);
        let a1 = a.as_ptr().add((i + 1) * k);
        let a2 = a.as_ptr().add((i + 2) * k);
        let a3 = a.as_ptr().add((i + 3) * k);
        let mut c = 0;
        while c + 8 <= n {
            let mut acc00 = _mm256_setzero_pd();
            let mut acc01 = _mm256_setzero_pd();
            let mut acc10 = _mm256_setzero_pd();
            let mut acc11 = _mm256_setzero_pd();
            let mut acc20 = _mm256_setzero_pd();
            let mut acc21 = _mm256_setzero_pd();
            let mut acc30 = _mm256_setzero_pd();
            let mut acc31 = _mm256_setzero_pd();
            for j in 0..k {
                let b0 = _mm256_loadu_pd(b.as_ptr().add(j * n + c));
                let b1 = _mm256_loadu_pd(b.as_ptr().add(j * n + c + 4));
                let v0 = _mm256_set1_pd(*a0.add(j));
                let v1 = _mm256_set1_pd(*a1.add(j));
                let v2 = _mm256_set1_pd(*a2.add(j));
                let v3 = _mm256_set1_pd(*a3.add(j));
                acc00 = _mm256_fmadd_pd(v0, b0, acc00);
                acc01 = _mm256_fmadd_pd(v0, b1, acc01);
                acc10 = _mm256_fmadd_pd(v1, b0, acc10);
                acc11 = _mm256_fmadd_pd(v1, b1, acc11);
                acc20 = _mm256_fmadd_pd(v2, b0, acc20);
                acc21 = _mm256_fmadd_pd(v2, b1, acc21);
                acc30 = _mm256_fmadd_pd(v3, b0, acc30);
                acc31 = _mm256_fmadd_pd(v3, b1, acc31);
            }
            _mm256_storeu_pd(out.as_mut_ptr().add(i * n + c), acc00);
            _mm256_storeu_pd(out.as_mut_ptr().add(i * n + c + 4), acc01);
            _mm256_storeu_pd(out.as_mut_ptr().add((i + 1) * n + c), acc10);
            _mm256_storeu_pd(out.as_mut_ptr().add((i + 1) * n + c + 4), acc11);
            _mm256_storeu_pd(out.as_mut_ptr().add((i + 2) * n + c), acc20);
            _mm256_storeu_pd(out.as_mut_ptr().add((i + 2) * n + c + 4), acc21);
            _mm256_storeu_pd(out.as_mut_ptr().add((i + 3) * n + c), acc30);
            _mm256_storeu_pd(out.as_mut_ptr().add((i + 3) * n + c + 4), acc31);
            c += 8;
        }
        if c < n {
            gemm_rows_tail(4, i, c.min(n), k, n, a, b, out);
        }
        i += 4;
    }
    while i < rows {
        let ar = a.as_ptr().add(i * k);
        let mut c = 0;
        while c + 4 <= n {
            let mut acc = _mm256_setzero_pd();
            for j in 0..k {
                let bv = _mm256_loadu_pd(b.as_ptr().add(j * n + c));
                acc = _mm256_fmadd_pd(_mm256_set1_pd(*ar.add(j)), bv, acc);
            }
            _mm256_storeu_pd(out.as_mut_ptr().add(i * n + c), acc);
            c += 4;
        }
        if c < n {
            gemm_rows_tail(1, i, c, k, n, a, b, out);
        }
        i += 1;
    }
}
