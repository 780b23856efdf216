//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] is an append-only list of nodes; every op computes its value
//! eagerly and records how it was produced. [`Tape::grad`] walks the tape
//! backwards and *emits the adjoint computation as ordinary ops onto the same
//! tape*, so gradients are themselves differentiable — which is exactly what
//! the R1 penalty's gradient-of-gradient needs. No op mutates an existing
//! node, so replaying identical programs is bit-deterministic.
//!
//! Image tensors use channels-last layout `[batch, height, width, channels]`;
//! convolution weights are `[3, 3, in_channels, out_channels]`.

pub mod adam;
mod kernels;
mod simd;

pub use adam::{adam_step, AdamConfig, AdamState, ParamStore};
pub use kernels::{gemm_nn, gemm_tn};

use crate::error::{invalid, shape_mismatch, Result};

/// Handle to a tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Broadcast(TensorId),
    ReduceSumTo(TensorId),
    Concat(Vec<TensorId>, usize),
    Slice {
        input: TensorId,
        axis: usize,
        start: usize,
    },
    PadZero {
        input: TensorId,
        axis: usize,
        before: usize,
    },
    Sum(TensorId),
    LeakyRelu(TensorId),
    /// Pointwise derivative record; carries no gradient of its own.
    LeakyReluMask,
    Sigmoid(TensorId),
    Softplus(TensorId),
    Conv2d {
        x: TensorId,
        w: TensorId,
    },
    Conv2dIgrad {
        g: TensorId,
        w: TensorId,
    },
    Conv2dWgrad {
        x: TensorId,
        g: TensorId,
    },
    Upsample2(TensorId),
    PoolSum2(TensorId),
}

struct Node {
    shape: Vec<usize>,
    data: std::sync::Arc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    suppress_grad: bool,
    /// Memoized im2col gathers keyed by node id; node data is immutable
    /// once pushed, and the backward of a convolution re-gathers the same
    /// patches its forward built.
    im2col_cache: std::collections::HashMap<usize, std::sync::Arc<Vec<f64>>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

const PAR_ELEMWISE_MIN: usize = 1 << 16;

fn ew_binary(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    use rayon::prelude::*;
    if a.len() < PAR_ELEMWISE_MIN {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let mut out = vec![0.0; a.len()];
    out.par_chunks_mut(PAR_ELEMWISE_MIN)
        .zip(a.par_chunks(PAR_ELEMWISE_MIN).zip(b.par_chunks(PAR_ELEMWISE_MIN)))
        .for_each(|(o, (x, y))| {
            for i in 0..o.len() {
                o[i] = f(x[i], y[i]);
            }
        });
    out
}

fn ew_unary(a: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    use rayon::prelude::*;
    if a.len() < PAR_ELEMWISE_MIN {
        return a.iter().map(|&x| f(x)).collect();
    }
    let mut out = vec![0.0; a.len()];
    out.par_chunks_mut(PAR_ELEMWISE_MIN)
        .zip(a.par_chunks(PAR_ELEMWISE_MIN))
        .for_each(|(o, x)| {
            for i in 0..o.len() {
                o[i] = f(x[i]);
            }
        });
    out
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(numel(self.shape(id)), 1);
        self.nodes[id.0].data[0]
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> TensorId {
        self.push_shared(shape, std::sync::Arc::new(data), op, requires_grad)
    }

    fn push_shared(
        &mut self,
        shape: Vec<usize>,
        data: std::sync::Arc<Vec<f64>>,
        op: Op,
        requires_grad: bool,
    ) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        let rg = requires_grad && !self.suppress_grad;
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad: rg,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Non-differentiable input (data, constants).
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> TensorId {
        self.push(shape.to_vec(), data, Op::Leaf, false)
    }

    /// Differentiable leaf (parameters, or inputs whose gradient is wanted).
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>) -> TensorId {
        self.push(shape.to_vec(), data, Op::Leaf, true)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> TensorId {
        self.constant(shape, vec![0.0; numel(shape)])
    }

    /// Copy of `x` detached from the graph (shares storage).
    pub fn detach(&mut self, x: TensorId) -> TensorId {
        let shape = self.nodes[x.0].shape.clone();
        let data = self.nodes[x.0].data.clone();
        self.push_shared(shape, data, Op::Leaf, false)
    }

    fn check_same_shape(&self, context: &str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(shape_mismatch(
                context,
                &self.nodes[a.0].shape,
                &self.nodes[b.0].shape,
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("add", a, b)?;
        let data = ew_binary(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::Add(a, b),
            self.rg(&[a, b]),
        ))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("sub", a, b)?;
        let data = ew_binary(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::Sub(a, b),
            self.rg(&[a, b]),
        ))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("mul", a, b)?;
        let data = ew_binary(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::Mul(a, b),
            self.rg(&[a, b]),
        ))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data = ew_unary(&self.nodes[a.0].data, |x| x * c);
        self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::Scale(a, c),
            self.rg(&[a]),
        )
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data = ew_unary(&self.nodes[a.0].data, |x| x + c);
        self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::AddScalar(a),
            self.rg(&[a]),
        )
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        kernels::gemm_nn(m, k, n, &self.nodes[a.0].data, &self.nodes[b.0].data, &mut data);
        Ok(self.push(vec![m, n], data, Op::Matmul(a, b), self.rg(&[a, b])))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = &self.nodes[a.0].shape;
        if sa.len() != 2 {
            return Err(shape_mismatch("transpose", sa, &[0, 0]));
        }
        let (m, n) = (sa[0], sa[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(vec![n, m], data, Op::Transpose(a), self.rg(&[a])))
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != numel(&self.nodes[a.0].shape) {
            return Err(shape_mismatch("reshape", &self.nodes[a.0].shape, shape));
        }
        let data = self.nodes[a.0].data.clone();
        Ok(self.push_shared(shape.to_vec(), data, Op::Reshape(a), self.rg(&[a])))
    }

    /// Numpy-style broadcast (right-aligned; source dims must equal the
    /// target or 1).
    pub fn broadcast(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let src_shape = self.nodes[a.0].shape.clone();
        if !broadcast_compatible(&src_shape, shape) {
            return Err(shape_mismatch("broadcast", &src_shape, shape));
        }
        let data = broadcast_data(&self.nodes[a.0].data, &src_shape, shape);
        Ok(self.push(shape.to_vec(), data, Op::Broadcast(a), self.rg(&[a])))
    }

    /// Sums over broadcast axes down to `shape` (the adjoint of
    /// [`Tape::broadcast`]).
    pub fn reduce_sum_to(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let src_shape = self.nodes[a.0].shape.clone();
        if !broadcast_compatible(shape, &src_shape) {
            return Err(shape_mismatch("reduce_sum_to", &src_shape, shape));
        }
        let data = reduce_data(&self.nodes[a.0].data, &src_shape, shape);
        Ok(self.push(shape.to_vec(), data, Op::ReduceSumTo(a), self.rg(&[a])))
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(invalid("concat of zero tensors"));
        }
        let base = self.nodes[parts[0].0].shape.clone();
        if axis >= base.len() {
            return Err(invalid(format!("concat axis {axis} out of range")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_mismatch("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![0.0; numel(&shape)];
        let row_len = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let s_axis = self.nodes[p.0].shape[axis];
            let block = s_axis * inner;
            let src = &self.nodes[p.0].data;
            for o in 0..outer {
                data[o * row_len + offset..o * row_len + offset + block]
                    .copy_from_slice(&src[o * block..(o + 1) * block]);
            }
            offset += block;
        }
        Ok(self.push(shape, data, Op::Concat(parts.to_vec(), axis), self.rg(parts)))
    }

    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let src_shape = self.nodes[a.0].shape.clone();
        if axis >= src_shape.len() || start + len > src_shape[axis] {
            return Err(invalid(format!(
                "slice [{start}..{}] on axis {axis} of {src_shape:?}",
                start + len
            )));
        }
        let outer: usize = src_shape[..axis].iter().product();
        let inner: usize = src_shape[axis + 1..].iter().product();
        let mut shape = src_shape.clone();
        shape[axis] = len;
        let mut data = vec![0.0; numel(&shape)];
        let src = &self.nodes[a.0].data;
        let src_row = src_shape[axis] * inner;
        let dst_row = len * inner;
        for o in 0..outer {
            data[o * dst_row..(o + 1) * dst_row]
                .copy_from_slice(&src[o * src_row + start * inner..o * src_row + (start + len) * inner]);
        }
        Ok(self.push(shape, data, Op::Slice { input: a, axis, start }, self.rg(&[a])))
    }

    /// Zero padding along one axis (adjoint of [`Tape::slice`]).
    pub fn pad_zero(
        &mut self,
        a: TensorId,
        axis: usize,
        before: usize,
        after: usize,
    ) -> Result<TensorId> {
        let src_shape = self.nodes[a.0].shape.clone();
        if axis >= src_shape.len() {
            return Err(invalid(format!("pad axis {axis} out of range")));
        }
        let outer: usize = src_shape[..axis].iter().product();
        let inner: usize = src_shape[axis + 1..].iter().product();
        let mut shape = src_shape.clone();
        shape[axis] += before + after;
        let mut data = vec![0.0; numel(&shape)];
        let src = &self.nodes[a.0].data;
        let src_row = src_shape[axis] * inner;
        let dst_row = shape[axis] * inner;
        for o in 0..outer {
            data[o * dst_row + before * inner..o * dst_row + before * inner + src_row]
                .copy_from_slice(&src[o * src_row..(o + 1) * src_row]);
        }
        Ok(self.push(
            shape,
            data,
            Op::PadZero {
                input: a,
                axis,
                before,
            },
            self.rg(&[a]),
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![1], vec![total], Op::Sum(a), self.rg(&[a]))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.nodes[a.0].data.len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn leaky_relu(&mut self, a: TensorId) -> TensorId {
        let data = ew_unary(&self.nodes[a.0].data, |x| {
            if x > 0.0 {
                x
            } else {
                LEAKY_SLOPE * x
            }
        });
        self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::LeakyRelu(a),
            self.rg(&[a]),
        )
    }

    /// Pointwise derivative of leaky_relu; piecewise constant, so it carries
    /// no gradient of its own.
    fn leaky_relu_mask(&mut self, a: TensorId) -> TensorId {
        let data = ew_unary(&self.nodes[a.0].data, |x| {
            if x > 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        });
        self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::LeakyReluMask,
            false,
        )
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data = ew_unary(&self.nodes[a.0].data, sigmoid_scalar);
        self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::Sigmoid(a),
            self.rg(&[a]),
        )
    }

    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        // log(1+e^x), stable on both tails.
        let data = ew_unary(&self.nodes[a.0].data, |x| {
            if x > 30.0 {
                x
            } else if x < -30.0 {
                x.exp()
            } else {
                x.exp().ln_1p()
            }
        });
        self.push(
            self.nodes[a.0].shape.clone(),
            data,
            Op::Softplus(a),
            self.rg(&[a]),
        )
    }

    /// 3x3 stride-1 same-padding convolution of a channels-last batch:
    /// `x [B,H,W,C] * w [3,3,C,O] -> [B,H,W,O]`.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId) -> Result<TensorId> {
        let (sx, sw) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        if sx.len() != 4 || sw.len() != 4 || sw[0] != 3 || sw[1] != 3 || sw[2] != sx[3] {
            return Err(shape_mismatch("conv2d", sx, sw));
        }
        let (b, h, wd, c, o) = (sx[0], sx[1], sx[2], sx[3], sw[3]);
        let cols = self.im2col_of(x);
        let rows = b * h * wd;
        let mut data = vec![0.0; rows * o];
        kernels::gemm_nn(rows, 9 * c, o, &cols, &self.nodes[w.0].data, &mut data);
        Ok(self.push(vec![b, h, wd, o], data, Op::Conv2d { x, w }, self.rg(&[x, w])))
    }

    /// Input gradient of [`Tape::conv2d`]: `g [B,H,W,O], w [3,3,C,O] ->
    /// [B,H,W,C]` (the transposed convolution).
    pub fn conv2d_igrad(&mut self, g: TensorId, w: TensorId) -> Result<TensorId> {
        let (sg, sw) = (&self.nodes[g.0].shape, &self.nodes[w.0].shape);
        if sg.len() != 4 || sw.len() != 4 || sw[0] != 3 || sw[1] != 3 || sw[3] != sg[3] {
            return Err(shape_mismatch("conv2d_igrad", sg, sw));
        }
        let (b, h, wd, o, c) = (sg[0], sg[1], sg[2], sg[3], sw[2]);
        // Flip the kernel spatially and swap channel roles, then reuse the
        // forward path.
        let src = &self.nodes[w.0].data;
        let mut flipped = vec![0.0; 9 * o * c];
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..c {
                    for oi in 0..o {
                        flipped[((ky * 3 + kx) * o + oi) * c + ci] =
                            src[(((2 - ky) * 3 + (2 - kx)) * c + ci) * o + oi];
                    }
                }
            }
        }
        let cols = self.im2col_of(g);
        let rows = b * h * wd;
        let mut data = vec![0.0; rows * c];
        kernels::gemm_nn(rows, 9 * o, c, &cols, &flipped, &mut data);
        Ok(self.push(vec![b, h, wd, c], data, Op::Conv2dIgrad { g, w }, self.rg(&[g, w])))
    }

    /// Weight gradient of [`Tape::conv2d`]: `x [B,H,W,C], g [B,H,W,O] ->
    /// [3,3,C,O]`.
    pub fn conv2d_wgrad(&mut self, x: TensorId, g: TensorId) -> Result<TensorId> {
        let (sx, sg) = (&self.nodes[x.0].shape, &self.nodes[g.0].shape);
        if sx.len() != 4 || sg.len() != 4 || sx[0] != sg[0] || sx[1] != sg[1] || sx[2] != sg[2] {
            return Err(shape_mismatch("conv2d_wgrad", sx, sg));
        }
        let (b, h, wd, c, o) = (sx[0], sx[1], sx[2], sx[3], sg[3]);
        let rows = b * h * wd;
        let cols = self.im2col_of(x);
        let mut data = vec![0.0; 9 * c * o];
        kernels::gemm_tn(rows, 9 * c, o, &cols, &self.nodes[g.0].data, &mut data);
        Ok(self.push(vec![3, 3, c, o], data, Op::Conv2dWgrad { x, g }, self.rg(&[x, g])))
    }

    /// Nearest-neighbor 2x spatial upsample of `[B,H,W,C]`.
    pub fn upsample2(&mut self, a: TensorId) -> Result<TensorId> {
        let s = &self.nodes[a.0].shape;
        if s.len() != 4 {
            return Err(shape_mismatch("upsample2", s, &[0, 0, 0, 0]));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut data = vec![0.0; b * 4 * h * w * c];
        kernels::upsample2(b, h, w, c, &self.nodes[a.0].data, &mut data);
        Ok(self.push(vec![b, 2 * h, 2 * w, c], data, Op::Upsample2(a), self.rg(&[a])))
    }

    /// Sums each 2x2 spatial block of `[B,H,W,C]` (H, W even); the adjoint
    /// of [`Tape::upsample2`]. Scale by 0.25 for average pooling.
    pub fn pool_sum2(&mut self, a: TensorId) -> Result<TensorId> {
        let s = &self.nodes[a.0].shape;
        if s.len() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(shape_mismatch("pool_sum2", s, &[0, 0, 0, 0]));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut data = vec![0.0; b * h * w * c / 4];
        kernels::pool_sum2(b, h, w, c, &self.nodes[a.0].data, &mut data);
        Ok(self.push(vec![b, h / 2, w / 2, c], data, Op::PoolSum2(a), self.rg(&[a])))
    }

    pub fn avg_pool2(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.pool_sum2(a)?;
        Ok(self.scale(s, 0.25))
    }

    /// Gradients of a scalar `loss` with respect to `wrt`. With
    /// `create_graph`, the returned gradients are differentiable nodes.
    /// Tensors unreachable from the loss get zero gradients.
    pub fn grad(
        &mut self,
        loss: TensorId,
        wrt: &[TensorId],
        create_graph: bool,
    ) -> Result<Vec<TensorId>> {
        if numel(self.shape(loss)) != 1 {
            return Err(invalid(format!(
                "grad needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let seed = self.constant(&[1], vec![1.0]);
        self.backward(loss, seed, wrt, create_graph)
    }

    /// Vector-Jacobian product: backpropagates `seed` (shaped like `output`)
    /// from `output` to `wrt`. This is how gradients cross non-tape code:
    /// compute the external adjoint, then seed it here.
    pub fn grad_seeded(
        &mut self,
        output: TensorId,
        seed_data: Vec<f64>,
        wrt: &[TensorId],
        create_graph: bool,
    ) -> Result<Vec<TensorId>> {
        if seed_data.len() != numel(self.shape(output)) {
            return Err(shape_mismatch(
                "grad_seeded",
                &[seed_data.len()],
                &[numel(self.shape(output))],
            ));
        }
        let shape = self.shape(output).to_vec();
        let seed = self.constant(&shape, seed_data);
        self.backward(output, seed, wrt, create_graph)
    }

    fn backward(
        &mut self,
        output: TensorId,
        seed: TensorId,
        wrt: &[TensorId],
        create_graph: bool,
    ) -> Result<Vec<TensorId>> {
        let start = output.0;
        let mut adjoint: Vec<Option<TensorId>> = vec![None; start + 1];
        if self.nodes[output.0].requires_grad {
            adjoint[output.0] = Some(seed);
        }
        let old_suppress = self.suppress_grad;
        if !create_graph {
            self.suppress_grad = true;
        }
        let result = self.backward_inner(start, &mut adjoint);
        self.suppress_grad = old_suppress;
        result?;

        wrt.iter()
            .map(|&id| match adjoint.get(id.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(id).to_vec();
                    Ok(self.zeros(&shape))
                }
            })
            .collect()
    }

    fn accumulate(
        &mut self,
        adjoint: &mut [Option<TensorId>],
        target: TensorId,
        contribution: TensorId,
    ) -> Result<()> {
        if !self.nodes[target.0].requires_grad {
            return Ok(());
        }
        adjoint[target.0] = Some(match adjoint[target.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution)?,
        });
        Ok(())
    }

    fn backward_inner(&mut self, start: usize, adjoint: &mut Vec<Option<TensorId>>) -> Result<()> {
        for id in (0..=start).rev() {
            let Some(g) = adjoint[id] else { continue };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(adjoint, a, g)?;
                    self.accumulate(adjoint, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(adjoint, a, g)?;
                    let neg = self.scale(g, -1.0);
                    self.accumulate(adjoint, b, neg)?;
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let ga = self.mul(g, b)?;
                        self.accumulate(adjoint, a, ga)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = self.mul(g, a)?;
                        self.accumulate(adjoint, b, gb)?;
                    }
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c);
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::AddScalar(a) => {
                    self.accumulate(adjoint, a, g)?;
                }
                Op::Matmul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let bt = self.transpose(b)?;
                        let ga = self.matmul(g, bt)?;
                        self.accumulate(adjoint, a, ga)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        let at = self.transpose(a)?;
                        let gb = self.matmul(at, g)?;
                        self.accumulate(adjoint, b, gb)?;
                    }
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a.0].shape.clone();
                    let ga = self.reshape(g, &shape)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::Broadcast(a) => {
                    let shape = self.nodes[a.0].shape.clone();
                    let ga = self.reduce_sum_to(g, &shape)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::ReduceSumTo(a) => {
                    let shape = self.nodes[a.0].shape.clone();
                    let ga = self.broadcast(g, &shape)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].shape[axis];
                        if self.nodes[p.0].requires_grad {
                            let gp = self.slice(g, axis, offset, len)?;
                            self.accumulate(adjoint, p, gp)?;
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let total = self.nodes[input.0].shape[axis];
                    let len = self.nodes[id].shape[axis];
                    let ga = self.pad_zero(g, axis, start, total - start - len)?;
                    self.accumulate(adjoint, input, ga)?;
                }
                Op::PadZero {
                    input,
                    axis,
                    before,
                } => {
                    let len = self.nodes[input.0].shape[axis];
                    let ga = self.slice(g, axis, before, len)?;
                    self.accumulate(adjoint, input, ga)?;
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a.0].shape.clone();
                    let ga = self.broadcast(g, &shape)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::LeakyRelu(a) => {
                    let mask = self.leaky_relu_mask(a);
                    let ga = self.mul(g, mask)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::LeakyReluMask => {}
                Op::Sigmoid(a) => {
                    // g * s * (1 - s), with s the recorded output node.
                    let s = TensorId(id);
                    let neg = self.scale(s, -1.0);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let gs = self.mul(g, s)?;
                    let ga = self.mul(gs, one_minus)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid(a);
                    let ga = self.mul(g, s)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::Conv2d { x, w } => {
                    if self.nodes[x.0].requires_grad {
                        let gx = self.conv2d_igrad(g, w)?;
                        self.accumulate(adjoint, x, gx)?;
                    }
                    if self.nodes[w.0].requires_grad {
                        let gw = self.conv2d_wgrad(x, g)?;
                        self.accumulate(adjoint, w, gw)?;
                    }
                }
                Op::Conv2dIgrad { g: a, w } => {
                    if self.nodes[a.0].requires_grad {
                        let ga = self.conv2d(g, w)?;
                        self.accumulate(adjoint, a, ga)?;
                    }
                    if self.nodes[w.0].requires_grad {
                        let gw = self.conv2d_wgrad(g, a)?;
                        self.accumulate(adjoint, w, gw)?;
                    }
                }
                Op::Conv2dWgrad { x, g: a } => {
                    if self.nodes[x.0].requires_grad {
                        let gx = self.conv2d_igrad(a, g)?;
                        self.accumulate(adjoint, x, gx)?;
                    }
                    if self.nodes[a.0].requires_grad {
                        let ga = self.conv2d(x, g)?;
                        self.accumulate(adjoint, a, ga)?;
                    }
                }
                Op::Upsample2(a) => {
                    let ga = self.pool_sum2(g)?;
                    self.accumulate(adjoint, a, ga)?;
                }
                Op::PoolSum2(a) => {
                    let ga = self.upsample2(g)?;
                    self.accumulate(adjoint, a, ga)?;
                }
            }
        }
        Ok(())
    }
}

impl Tape {
    fn im2col_of(&mut self, x: TensorId) -> std::sync::Arc<Vec<f64>> {
        if let Some(hit) = self.im2col_cache.get(&x.0) {
            return hit.clone();
        }
        let s = &self.nodes[x.0].shape;
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut cols = vec![0.0; b * h * w * 9 * c];
        kernels::im2col_3x3(b, h, w, c, &self.nodes[x.0].data, &mut cols);
        let arc = std::sync::Arc::new(cols);
        self.im2col_cache.insert(x.0, arc.clone());
        arc
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_compatible(src: &[usize], dst: &[usize]) -> bool {
    if src.len() > dst.len() {
        return false;
    }
    let offset = dst.len() - src.len();
    src.iter()
        .zip(&dst[offset..])
        .all(|(&s, &d)| s == d || s == 1)
}

/// Expands `src` (shape `src_shape`) to `dst_shape`, numpy semantics.
fn broadcast_data(src: &[f64], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f64> {
    let nd = dst_shape.len();
    // Right-align source dims and compute its stride per destination axis
    // (0 on broadcast axes).
    let offset = nd - src_shape.len();
    let mut src_strides = vec![0usize; nd];
    {
        let mut stride = 1;
        for i in (0..src_shape.len()).rev() {
            src_strides[offset + i] = if src_shape[i] == 1 { 0 } else { stride };
            stride *= src_shape[i];
        }
    }
    let total = numel(dst_shape);
    let mut out = vec![0.0; total];
    if nd == 0 {
        return src.to_vec();
    }
    let last = dst_shape[nd - 1];
    let outer_total = total / last.max(1);
    let mut idx = vec![0usize; nd.saturating_sub(1)];
    let mut src_off = 0usize;
    for outer in 0..outer_total {
        let dst_base = outer * last;
        if src_strides[nd - 1] == 0 {
            let v = src[src_off];
            out[dst_base..dst_base + last].fill(v);
        } else {
            out[dst_base..dst_base + last].copy_from_slice(&src[src_off..src_off + last]);
        }
        // Odometer over the outer axes.
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            src_off += src_strides[ax];
            if idx[ax] < dst_shape[ax] {
                break;
            }
            src_off -= src_strides[ax] * dst_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Sums `src` (shape `src_shape`) down to `dst_shape` (the adjoint of
/// [`broadcast_data`]).
fn reduce_data(src: &[f64], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f64> {
    let nd = src_shape.len();
    let offset = nd - dst_shape.len();
    let mut dst_strides = vec![0usize; nd];
    {
        let mut stride = 1;
        for i in (0..dst_shape.len()).rev() {
            dst_strides[offset + i] = if dst_shape[i] == 1 { 0 } else { stride };
            stride *= dst_shape[i];
        }
    }
    let mut out = vec![0.0; numel(dst_shape)];
    if nd == 0 {
        out[0] = src[0];
        return out;
    }
    let last = src_shape[nd - 1];
    let outer_total = src.len() / last.max(1);
    let mut idx = vec![0usize; nd.saturating_sub(1)];
    let mut dst_off = 0usize;
    for outer in 0..outer_total {
        let src_base = outer * last;
        if dst_strides[nd - 1] == 0 {
            out[dst_off] += src[src_base..src_base + last].iter().sum::<f64>();
        } else {
            for i in 0..last {
                out[dst_off + i] += src[src_base + i];
            }
        }
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            dst_off += dst_strides[ax];
            if idx[ax] < src_shape[ax] {
                break;
            }
            dst_off -= dst_strides[ax] * src_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests;
