//! Define-by-run computation tape with reverse-mode gradient accumulation.
//!
//! Ops record themselves on the tape as they execute; [`Tape::backward`]
//! replays the record once in reverse. Nodes are topologically ordered by
//! construction, so a single reverse sweep visits every node exactly once.

use std::cell::RefCell;

use rayon::prelude::*;

use crate::error::{AdError, Result};
use crate::rng::counter_uniform;
use crate::special;
use crate::tensor::{broadcasts_onto, gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Key identifying one dropout site at one point in training or sampling.
#[derive(Debug, Clone, Copy)]
pub struct DropoutKey {
    pub seed: u64,
    pub layer: u64,
    pub step: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Matmul(usize, usize),
    TransposeLast(usize),
    Reshape(usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Gelu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    LnGamma(usize),
    SoftmaxLast(usize),
    Mean(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    swept: bool,
}

/// Records every primitive applied to its [`Var`] handles.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to one tape node. Copyable; all arithmetic goes through methods
/// or the standard operators (which panic on nonconforming shapes — use
/// the checked methods at input boundaries).
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                swept: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Insert a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a non-trainable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Inverted dropout as a constant mask multiply. The mask is a pure
    /// function of the key and element index.
    pub fn dropout<'t>(&'t self, x: Var<'t>, rate: f64, key: DropoutKey) -> Var<'t> {
        if rate <= 0.0 {
            return x;
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let (shape, len) = {
            let inner = self.inner.borrow();
            let v = &inner.nodes[x.id].value;
            (v.shape().to_vec(), v.len())
        };
        let mask: Vec<f64> = (0..len)
            .map(|i| {
                if counter_uniform(key.seed, key.layer, key.step, i as u64) >= rate {
                    keep_scale
                } else {
                    0.0
                }
            })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask).expect("mask shape"));
        x.mul(mask).expect("dropout shapes match")
    }

    /// Reverse sweep from a scalar loss. Fails if the tape was already
    /// swept (gradients would silently double-accumulate otherwise).
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.swept {
            return Err(AdError::State(
                "backward called twice on one tape; retrace the forward pass first",
            ));
        }
        if inner.nodes.is_empty() {
            return Err(AdError::State("backward on an empty tape"));
        }
        if inner.nodes[loss.id].value.len() != 1 {
            return Err(AdError::State("backward root must be a scalar"));
        }
        inner.swept = true;
        inner.grads = vec![None; inner.nodes.len()];
        inner.grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if inner.grads[id].is_none() || !inner.nodes[id].needs_grad {
                continue;
            }
            let grad = inner.grads[id].take().unwrap();
            propagate(&mut inner, id, &grad);
            inner.grads[id] = Some(grad);
        }
        Ok(())
    }

    /// Gradient of the last backward sweep w.r.t. `var`, if it received one.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let inner = self.inner.borrow();
        inner.grads.get(var.id).and_then(|g| {
            g.as_ref().map(|buf| {
                Tensor::new(inner.nodes[var.id].value.shape().to_vec(), buf.clone())
                    .expect("grad shape matches value")
            })
        })
    }
}

fn propagate(inner: &mut TapeInner, id: usize, grad: &[f64]) {
    // Split borrows: read node values immutably, write grads mutably.
    let (nodes, grads) = (&inner.nodes, &mut inner.grads);
    let add_grad = |grads: &mut Vec<Option<Vec<f64>>>, target: usize, contrib: Vec<f64>| {
        if !nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot => *slot = Some(contrib),
        }
    };
    let val = |i: usize| nodes[i].value.data();
    let shape = |i: usize| nodes[i].value.shape();

    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_grad(grads, *a, reduce_for(grad, shape(id), shape(*a)));
            add_grad(grads, *b, reduce_for(grad, shape(id), shape(*b)));
        }
        Op::Sub(a, b) => {
            add_grad(grads, *a, reduce_for(grad, shape(id), shape(*a)));
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            add_grad(grads, *b, reduce_for(&neg, shape(id), shape(*b)));
        }
        Op::Mul(a, b) => {
            let ga = bcast_apply(grad, val(*b), shape(id), shape(*b), |g, b| g * b);
            add_grad(grads, *a, reduce_for(&ga, shape(id), shape(*a)));
            let gb = bcast_apply(grad, val(*a), shape(id), shape(*a), |g, a| g * a);
            add_grad(grads, *b, reduce_for(&gb, shape(id), shape(*b)));
        }
        Op::Div(a, b) => {
            let ga = bcast_apply(grad, val(*b), shape(id), shape(*b), |g, b| g / b);
            add_grad(grads, *a, reduce_for(&ga, shape(id), shape(*a)));
            let y = val(id);
            let gb: Vec<f64> = bcast_apply(grad, val(*b), shape(id), shape(*b), |g, b| g / b)
                .iter()
                .zip(y)
                .map(|(gdb, y)| -gdb * y)
                .collect();
            add_grad(grads, *b, reduce_for(&gb, shape(id), shape(*b)));
        }
        Op::Neg(a) => add_grad(grads, *a, grad.iter().map(|g| -g).collect()),
        Op::AddScalar(a) => add_grad(grads, *a, grad.to_vec()),
        Op::MulScalar(a, c) => add_grad(grads, *a, grad.iter().map(|g| g * c).collect()),
        Op::Matmul(a, b) => {
            let (ga, gb) = matmul_backward(val(*a), shape(*a), val(*b), shape(*b), grad);
            add_grad(grads, *a, ga);
            add_grad(grads, *b, gb);
        }
        Op::TransposeLast(a) => {
            add_grad(grads, *a, transpose_last(grad, shape(id)));
        }
        Op::Reshape(a) => add_grad(grads, *a, grad.to_vec()),
        Op::Slice {
            src,
            axis,
            start,
            len,
        } => {
            let src_shape = shape(*src);
            let mut out = vec![0.0; nodes[*src].value.len()];
            scatter_slice(grad, &mut out, src_shape, *axis, *start, *len);
            add_grad(grads, *src, out);
        }
        Op::Concat { parts, axis } => {
            let parts = parts.clone();
            let axis = *axis;
            let out_shape = shape(id).to_vec();
            let mut offset = 0;
            for part in parts {
                let part_shape = nodes[part].value.shape().to_vec();
                let len = part_shape[axis];
                let mut gpart = vec![0.0; nodes[part].value.len()];
                gather_slice(grad, &mut gpart, &out_shape, axis, offset, len);
                add_grad(grads, part, gpart);
                offset += len;
            }
        }
        Op::Sigmoid(a) => {
            let y = val(id);
            add_grad(
                grads,
                *a,
                grad.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            );
        }
        Op::Tanh(a) => {
            let y = val(id);
            add_grad(
                grads,
                *a,
                grad.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            );
        }
        Op::Relu(a) => {
            let x = val(*a);
            add_grad(
                grads,
                *a,
                grad.iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            );
        }
        Op::Gelu(a) => {
            let x = val(*a);
            let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
            add_grad(
                grads,
                *a,
                grad.iter()
                    .zip(x)
                    .map(|(g, x)| {
                        let cdf = 0.5 * (1.0 + special::erf(x / std::f64::consts::SQRT_2));
                        let pdf = c * (-0.5 * x * x).exp();
                        g * (cdf + x * pdf)
                    })
                    .collect(),
            );
        }
        Op::Softplus(a) => {
            let x = val(*a);
            add_grad(
                grads,
                *a,
                grad.iter()
                    .zip(x)
                    .map(|(g, x)| g / (1.0 + (-x).exp()))
                    .collect(),
            );
        }
        Op::Exp(a) => {
            let y = val(id);
            add_grad(grads, *a, grad.iter().zip(y).map(|(g, y)| g * y).collect());
        }
        Op::Log(a) => {
            let x = val(*a);
            add_grad(grads, *a, grad.iter().zip(x).map(|(g, x)| g / x).collect());
        }
        Op::Abs(a) => {
            let x = val(*a);
            add_grad(
                grads,
                *a,
                grad.iter().zip(x).map(|(g, x)| g * x.signum()).collect(),
            );
        }
        Op::LnGamma(a) => {
            let x = val(*a);
            add_grad(
                grads,
                *a,
                grad.iter()
                    .zip(x)
                    .map(|(g, x)| g * special::digamma(*x).expect("checked at trace time"))
                    .collect(),
            );
        }
        Op::SoftmaxLast(a) => {
            let y = val(id);
            let n = *shape(id).last().unwrap();
            let mut out = vec![0.0; grad.len()];
            for ((orow, grow), yrow) in out
                .chunks_mut(n)
                .zip(grad.chunks(n))
                .zip(y.chunks(n))
            {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for ((o, g), y) in orow.iter_mut().zip(grow).zip(yrow) {
                    *o = y * (g - dot);
                }
            }
            add_grad(grads, *a, out);
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.len() as f64;
            let g = grad[0] / n;
            add_grad(grads, *a, vec![g; nodes[*a].value.len()]);
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let (gx, gg, gb) =
                layer_norm_backward(val(*x), shape(*x), val(*gain), *eps, grad);
            add_grad(grads, *x, gx);
            add_grad(grads, *gain, gg);
            add_grad(grads, *bias, gb);
        }
    }
}

// ---------------------------------------------------------------------------
// Broadcast helpers. `small` must satisfy `broadcasts_onto(small, large)`.

fn bcast_apply(
    large: &[f64],
    small: &[f64],
    _large_shape: &[usize],
    _small_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let period = small.len();
    large
        .iter()
        .enumerate()
        .map(|(i, &l)| f(l, small[i % period]))
        .collect()
}

/// Sum-reduce a gradient down to `to_shape` (suffix rule).
fn reduce_for(grad: &[f64], _from_shape: &[usize], to_shape: &[usize]) -> Vec<f64> {
    let to_len: usize = to_shape.iter().product();
    if to_len == grad.len() {
        return grad.to_vec();
    }
    let mut out = vec![0.0; to_len];
    for chunk in grad.chunks(to_len) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    out
}

fn transpose_last(data: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let block = rows * cols;
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

fn slice_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Copy the [start, start+len) band of `axis` out of `src`.
fn gather_slice(
    src: &[f64],
    dst: &mut [f64],
    src_shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) {
    let (outer, dim, inner) = slice_dims(src_shape, axis);
    for o in 0..outer {
        let s = &src[(o * dim + start) * inner..(o * dim + start + len) * inner];
        dst[o * len * inner..(o + 1) * len * inner].copy_from_slice(s);
    }
}

/// Add the band gradient back into the source layout.
fn scatter_slice(
    band: &[f64],
    dst: &mut [f64],
    dst_shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) {
    let (outer, dim, inner) = slice_dims(dst_shape, axis);
    for o in 0..outer {
        let d = &mut dst[(o * dim + start) * inner..(o * dim + start + len) * inner];
        let b = &band[o * len * inner..(o + 1) * len * inner];
        for (x, y) in d.iter_mut().zip(b) {
            *x += y;
        }
    }
}

// ---------------------------------------------------------------------------
// Matmul shape logic shared by forward and backward.

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn matmul_dims(lhs: &[usize], rhs: &[usize]) -> Option<MatmulDims> {
    if lhs.len() < 2 || rhs.len() < 2 {
        return None;
    }
    let m = lhs[lhs.len() - 2];
    let k = lhs[lhs.len() - 1];
    let batch: usize = lhs[..lhs.len() - 2].iter().product();
    if rhs.len() == 2 {
        if rhs[0] != k {
            return None;
        }
        return Some(MatmulDims {
            batch,
            m,
            k,
            n: rhs[1],
            shared_rhs: true,
        });
    }
    if rhs.len() == lhs.len() && rhs[..rhs.len() - 2] == lhs[..lhs.len() - 2] && rhs[rhs.len() - 2] == k {
        return Some(MatmulDims {
            batch,
            m,
            k,
            n: rhs[rhs.len() - 1],
            shared_rhs: false,
        });
    }
    None
}

fn matmul_forward(a: &[f64], ashape: &[usize], b: &[f64], bshape: &[usize]) -> Option<(Vec<f64>, Vec<usize>)> {
    let d = matmul_dims(ashape, bshape)?;
    let mut out_shape = ashape[..ashape.len() - 2].to_vec();
    out_shape.push(d.m);
    out_shape.push(d.n);
    let mut out = vec![0.0; d.batch * d.m * d.n];
    if d.shared_rhs {
        // Collapse the batch into the row dimension: one big gemm.
        gemm_nn(a, b, d.batch * d.m, d.k, d.n, &mut out);
    } else {
        let (bm, bk, bn) = (d.m * d.k, d.k * d.n, d.m * d.n);
        out.par_chunks_mut(bn).enumerate().for_each(|(i, chunk)| {
            gemm_serial_nn(&a[i * bm..(i + 1) * bm], &b[i * bk..(i + 1) * bk], d.m, d.k, d.n, chunk);
        });
    }
    Some((out, out_shape))
}

fn matmul_backward(
    a: &[f64],
    ashape: &[usize],
    b: &[f64],
    bshape: &[usize],
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = matmul_dims(ashape, bshape).expect("validated at trace time");
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    if d.shared_rhs {
        gemm_nt(grad, b, d.batch * d.m, d.n, d.k, &mut ga);
        gemm_tn(a, grad, d.batch * d.m, d.k, d.n, &mut gb);
    } else {
        let (bm, bk, bn) = (d.m * d.k, d.k * d.n, d.m * d.n);
        ga.par_chunks_mut(bm).enumerate().for_each(|(i, chunk)| {
            gemm_serial_nt(&grad[i * bn..(i + 1) * bn], &b[i * bk..(i + 1) * bk], d.m, d.n, d.k, chunk);
        });
        gb.par_chunks_mut(bk).enumerate().for_each(|(i, chunk)| {
            gemm_serial_tn(&a[i * bm..(i + 1) * bm], &grad[i * bn..(i + 1) * bn], d.m, d.k, d.n, chunk);
        });
    }
    (ga, gb)
}

// Serial kernels for the per-batch path (outer loop already parallel).
fn gemm_serial_nn(a: &[f64], b: &[f64], _m: usize, k: usize, n: usize, out: &mut [f64]) {
    for (row, out_row) in out.chunks_mut(n).enumerate() {
        let a_row = &a[row * k..(row + 1) * k];
        for (p, &a_v) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_v) in out_row.iter_mut().zip(b_row) {
                *o += a_v * b_v;
            }
        }
    }
}

fn gemm_serial_nt(a: &[f64], b: &[f64], _m: usize, k: usize, n: usize, out: &mut [f64]) {
    for (row, out_row) in out.chunks_mut(n).enumerate() {
        let a_row = &a[row * k..(row + 1) * k];
        for (col, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[col * k..(col + 1) * k];
            *o += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

fn gemm_serial_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for row in 0..m {
        let a_row = &a[row * k..(row + 1) * k];
        let b_row = &b[row * n..(row + 1) * n];
        for (p, &a_v) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &b_v) in out_row.iter_mut().zip(b_row) {
                *o += a_v * b_v;
            }
        }
    }
}

fn layer_norm_forward(x: &[f64], shape: &[usize], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = *shape.last().unwrap();
    let mut out = vec![0.0; x.len()];
    out.chunks_mut(n).zip(x.chunks(n)).for_each(|(orow, xrow)| {
        let mu = xrow.iter().sum::<f64>() / n as f64;
        let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for ((o, &xv), (&g, &b)) in orow.iter_mut().zip(xrow).zip(gain.iter().zip(bias)) {
            *o = (xv - mu) * inv * g + b;
        }
    });
    out
}

fn layer_norm_backward(
    x: &[f64],
    shape: &[usize],
    gain: &[f64],
    eps: f64,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = *shape.last().unwrap();
    let mut gx = vec![0.0; x.len()];
    let mut ggain = vec![0.0; n];
    let mut gbias = vec![0.0; n];
    for ((gxrow, xrow), grow) in gx.chunks_mut(n).zip(x.chunks(n)).zip(grad.chunks(n)) {
        let mu = xrow.iter().sum::<f64>() / n as f64;
        let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = xrow.iter().map(|v| (v - mu) * inv).collect();
        let dxhat: Vec<f64> = grow.iter().zip(gain).map(|(g, gn)| g * gn).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / n as f64;
        for i in 0..n {
            gxrow[i] = inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            ggain[i] += grow[i] * xhat[i];
            gbias[i] += grow[i];
        }
    }
    (gx, ggain, gbias)
}

// ---------------------------------------------------------------------------
// The op-builder surface. The checked `add`/`sub`/`mul`/`div` methods
// return Result; the std::ops operators below panic on shape mismatch.

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].needs_grad
    }

    fn binary(
        self,
        rhs: Var<'t>,
        op_name: &'static str,
        make_op: impl FnOnce(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (data, shape) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[rhs.id].value;
            if a.shape() == b.shape() {
                (
                    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect::<Vec<f64>>(),
                    a.shape().to_vec(),
                )
            } else if broadcasts_onto(b.shape(), a.shape()) {
                (
                    bcast_apply(a.data(), b.data(), a.shape(), b.shape(), &f),
                    a.shape().to_vec(),
                )
            } else if broadcasts_onto(a.shape(), b.shape()) {
                (
                    bcast_apply(b.data(), a.data(), b.shape(), a.shape(), |y, x| f(x, y)),
                    b.shape().to_vec(),
                )
            } else {
                return Err(AdError::Shape {
                    op: op_name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self
            .tape
            .push(Tensor::new(shape, data).expect("shape checked"), make_op(self.id, rhs.id), needs))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "div", Op::Div, |a, b| a / b)
    }

    fn unary(self, make_op: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with(|v| v.map(&f));
        let needs = self.needs_grad();
        self.tape.push(value, make_op(self.id), needs)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.with(|v| v.map(|x| x + c));
        let needs = self.needs_grad();
        self.tape.push(value, Op::AddScalar(self.id), needs)
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        let value = self.with(|v| v.map(|x| x * c));
        let needs = self.needs_grad();
        self.tape.push(value, Op::MulScalar(self.id, c), needs)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    /// Exact-erf GELU: x * Phi(x).
    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu, |x| {
            x * 0.5 * (1.0 + special::erf(x / std::f64::consts::SQRT_2))
        })
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus, special::softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs, f64::abs)
    }

    /// Elementwise natural log; every element must be positive.
    pub fn log(self) -> Result<Var<'t>> {
        if let Some(bad) = self.with(|v| v.data().iter().find(|x| x.is_nan() || **x <= 0.0).copied()) {
            return Err(AdError::Domain {
                op: "log",
                value: bad,
                domain: "(0, inf)",
            });
        }
        Ok(self.unary(Op::Log, |x| x.ln()))
    }

    /// Elementwise log-gamma; every element must be positive.
    pub fn ln_gamma(self) -> Result<Var<'t>> {
        if let Some(bad) = self.with(|v| v.data().iter().find(|x| x.is_nan() || **x <= 0.0).copied()) {
            return Err(AdError::Domain {
                op: "ln_gamma",
                value: bad,
                domain: "(0, inf)",
            });
        }
        Ok(self.unary(Op::LnGamma, |x| {
            special::ln_gamma(x).expect("positive by check above")
        }))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let computed = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[rhs.id].value;
            matmul_forward(a.data(), a.shape(), b.data(), b.shape()).ok_or(AdError::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        };
        let (data, shape) = computed?;
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(
            Tensor::new(shape, data).expect("shape consistent"),
            Op::Matmul(self.id, rhs.id),
            needs,
        ))
    }

    /// Swap the last two dimensions.
    pub fn transpose_last(self) -> Var<'t> {
        let (data, shape) = self.with(|v| {
            let mut shape = v.shape().to_vec();
            let r = shape.len();
            shape.swap(r - 2, r - 1);
            (transpose_last(v.data(), v.shape()), shape)
        });
        let needs = self.needs_grad();
        self.tape.push(
            Tensor::new(shape, data).expect("transpose preserves count"),
            Op::TransposeLast(self.id),
            needs,
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.with(|v| v.reshaped(shape.to_vec()))?;
        let needs = self.needs_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), needs))
    }

    /// Take `len` entries of `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let (data, shape) = {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].value;
            if axis >= v.rank() || start + len > v.shape()[axis] {
                return Err(AdError::Shape {
                    op: "slice",
                    lhs: v.shape().to_vec(),
                    rhs: vec![axis, start, len],
                });
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = len;
            let mut data = vec![0.0; shape.iter().product()];
            gather_slice(v.data(), &mut data, v.shape(), axis, start, len);
            (data, shape)
        };
        let needs = self.needs_grad();
        Ok(self.tape.push(
            Tensor::new(shape, data).expect("slice shape"),
            Op::Slice {
                src: self.id,
                axis,
                start,
                len,
            },
            needs,
        ))
    }

    /// Softmax over the last dimension.
    pub fn softmax_last(self) -> Var<'t> {
        let value = self.with(|v| {
            let n = *v.shape().last().unwrap();
            let mut out = vec![0.0; v.len()];
            for (orow, xrow) in out.chunks_mut(n).zip(v.data().chunks(n)) {
                let max = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, &x) in orow.iter_mut().zip(xrow) {
                    *o = (x - max).exp();
                    sum += *o;
                }
                for o in orow.iter_mut() {
                    *o /= sum;
                }
            }
            Tensor::new(v.shape().to_vec(), out).expect("softmax shape")
        });
        let needs = self.needs_grad();
        self.tape.push(value, Op::SoftmaxLast(self.id), needs)
    }

    /// Mean over every element, producing a scalar.
    pub fn mean(self) -> Var<'t> {
        let value = self.with(|v| {
            Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64)
        });
        let needs = self.needs_grad();
        self.tape.push(value, Op::Mean(self.id), needs)
    }

    /// Layer normalization over the last dimension with learned gain/bias.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (data, shape) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            let g = &inner.nodes[gain.id].value;
            let b = &inner.nodes[bias.id].value;
            let n = *x.shape().last().unwrap();
            if g.shape() != [n] || b.shape() != [n] {
                return Err(AdError::Shape {
                    op: "layer_norm",
                    lhs: x.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            (
                layer_norm_forward(x.data(), x.shape(), g.data(), b.data(), eps),
                x.shape().to_vec(),
            )
        };
        let needs = self.needs_grad() || gain.needs_grad() || bias.needs_grad();
        Ok(self.tape.push(
            Tensor::new(shape, data).expect("layer_norm shape"),
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
            },
            needs,
        ))
    }
}

/// Concatenate along `axis`. All parts must agree on every other dimension.
pub fn concat<'t>(tape: &'t Tape, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    if parts.is_empty() {
        return Err(AdError::State("concat of zero parts"));
    }
    let (data, shape, ids, needs) = {
        let inner = tape.inner.borrow();
        let first = inner.nodes[parts[0].id].value.shape().to_vec();
        let mut total_axis = 0;
        for p in parts {
            let s = inner.nodes[p.id].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, d)| i != axis && *d != first[i])
            {
                return Err(AdError::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut shape = first;
        shape[axis] = total_axis;
        let mut data = vec![0.0; shape.iter().product()];
        let (outer, dim, inner_stride) = slice_dims(&shape, axis);
        let mut offset = 0;
        for p in parts {
            let v = &inner.nodes[p.id].value;
            let plen = v.shape()[axis];
            for o in 0..outer {
                let dst = &mut data
                    [(o * dim + offset) * inner_stride..(o * dim + offset + plen) * inner_stride];
                dst.copy_from_slice(
                    &v.data()[o * plen * inner_stride..(o + 1) * plen * inner_stride],
                );
            }
            offset += plen;
        }
        let needs = parts.iter().any(|p| p.needs_grad());
        (data, shape, parts.iter().map(|p| p.id).collect::<Vec<_>>(), needs)
    };
    Ok(tape.push(
        Tensor::new(shape, data).expect("concat shape"),
        Op::Concat { parts: ids, axis },
        needs,
    ))
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs).expect("add: conforming shapes")
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs).expect("sub: conforming shapes")
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs).expect("mul: conforming shapes")
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        Var::div(self, rhs).expect("div: conforming shapes")
    }
}
