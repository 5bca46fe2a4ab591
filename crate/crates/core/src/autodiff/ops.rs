//! Primitive operations: forward kernels, recorded ops and their adjoints.

use std::sync::Arc;

use rand::Rng as _;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, numel, Float, MatView, Tensor};

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub(super) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
pub(super) enum Unary {
    Gelu,
    Tanh,
    Exp,
    Log,
    Softplus,
}

pub(super) enum Op<T> {
    Leaf,
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        input: usize,
        gain: usize,
        bias: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        input: usize,
        mask: Arc<Vec<T>>,
    },
    Gather {
        table: usize,
        ids: Arc<Vec<usize>>,
    },
    Reshape(usize),
    Permute {
        input: usize,
        perm: Vec<usize>,
    },
    SumAll(usize),
    MeanAll(usize),
    SumAxis {
        input: usize,
        axis: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Arc<Vec<usize>>,
        probs: Vec<T>,
    },
    MaskedFill {
        input: usize,
        mask: Arc<Vec<bool>>,
    },
}

impl<T: Float> Op<T> {
    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(Binary::Add, ..) => "add",
            Op::Binary(Binary::Sub, ..) => "sub",
            Op::Binary(Binary::Mul, ..) => "mul",
            Op::Binary(Binary::Div, ..) => "div",
            Op::Unary(Unary::Gelu, _) => "gelu",
            Op::Unary(Unary::Tanh, _) => "tanh",
            Op::Unary(Unary::Exp, _) => "exp",
            Op::Unary(Unary::Log, _) => "log",
            Op::Unary(Unary::Softplus, _) => "softplus",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul { .. } => "matmul",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::Gather { .. } => "gather",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MaskedFill { .. } => "masked_fill",
        }
    }

    pub(super) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::LayerNorm {
                input, gain, bias, ..
            } => vec![*input, *gain, *bias],
            Op::Unary(_, x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Reshape(x)
            | Op::SumAll(x)
            | Op::MeanAll(x) => vec![*x],
            Op::Softmax { input, .. }
            | Op::Dropout { input, .. }
            | Op::Permute { input, .. }
            | Op::SumAxis { input, .. }
            | Op::MaskedFill { input, .. } => vec![*input],
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// Adjoint: given the values of the inputs (in [`Op::inputs`] order), the
    /// output value and the upstream gradient, returns per-input gradients.
    pub(super) fn backward(
        &self,
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Vec<(usize, Tensor<T>)> {
        let ids = self.inputs();
        match self {
            Op::Leaf => vec![],
            Op::Binary(kind, ..) => {
                let (ga, gb) = binary_backward(*kind, inputs[0], inputs[1], g);
                vec![(ids[0], ga), (ids[1], gb)]
            }
            Op::Unary(kind, _) => {
                let x = inputs[0].data();
                let y = out.data();
                let gd = g.data();
                let d: Vec<T> = (0..x.len())
                    .map(|i| gd[i] * unary_derivative(*kind, x[i], y[i]))
                    .collect();
                vec![(ids[0], Tensor::from_parts(out.shape().to_vec(), d))]
            }
            Op::Scale(_, c) => vec![(ids[0], g.map(|v| v * *c))],
            Op::AddScalar(_) => vec![(ids[0], g.clone())],
            Op::MatMul { trans_b, .. } => {
                let (ga, gb) = matmul_backward(inputs[0], inputs[1], *trans_b, g);
                vec![(ids[0], ga), (ids[1], gb)]
            }
            Op::Softmax { axis, .. } => {
                vec![(ids[0], softmax_backward(out, g, *axis))]
            }
            Op::LayerNorm { mean, rstd, .. } => {
                let (gx, gg, gb) = layer_norm_backward(inputs[0], inputs[1], mean, rstd, g);
                vec![(ids[0], gx), (ids[1], gg), (ids[2], gb)]
            }
            Op::Dropout { mask, .. } => {
                let d = g.data().iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect();
                vec![(ids[0], Tensor::from_parts(g.shape().to_vec(), d))]
            }
            Op::Gather { ids: rows, .. } => {
                let table = inputs[0];
                let width = numel(&table.shape()[1..]);
                let mut d = vec![T::zero(); table.len()];
                for (k, &row) in rows.iter().enumerate() {
                    let src = &g.data()[k * width..(k + 1) * width];
                    for (acc, &v) in d[row * width..(row + 1) * width].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
                vec![(ids[0], Tensor::from_parts(table.shape().to_vec(), d))]
            }
            Op::Reshape(_) => vec![(
                ids[0],
                Tensor::from_parts(inputs[0].shape().to_vec(), g.data().to_vec()),
            )],
            Op::Permute { perm, .. } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                vec![(ids[0], permute(g, &inverse))]
            }
            Op::SumAll(_) => vec![(ids[0], Tensor::full(inputs[0].shape(), g.item()))],
            Op::MeanAll(_) => {
                let n = T::from_usize(inputs[0].len()).unwrap();
                vec![(ids[0], Tensor::full(inputs[0].shape(), g.item() / n))]
            }
            Op::SumAxis { axis, .. } => {
                let shape = inputs[0].shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let gd = g.data();
                let mut d = vec![T::zero(); inputs[0].len()];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        d[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(ids[0], Tensor::from_parts(shape.to_vec(), d))]
            }
            Op::CrossEntropy { targets, probs, .. } => {
                let shape = inputs[0].shape();
                let classes = *shape.last().unwrap();
                let rows = targets.len();
                let scale = g.item() / T::from_usize(rows).unwrap();
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * classes + t] -= scale;
                }
                vec![(ids[0], Tensor::from_parts(shape.to_vec(), d))]
            }
            Op::MaskedFill { mask, .. } => {
                let d = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(&v, &m)| if m { T::zero() } else { v })
                    .collect();
                vec![(ids[0], Tensor::from_parts(g.shape().to_vec(), d))]
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Broadcasting

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` (row-major) aligned to `out`, zero on broadcast axes.
pub(crate) fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 && out[i + offset] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching input offsets.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    let rank = out.len();
    let mut idx = vec![0; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary_apply<T: Float>(kind: Binary, a: T, b: T) -> T {
    match kind {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Mul => a * b,
        Binary::Div => a / b,
    }
}

fn binary_forward<T: Float>(kind: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::dim("broadcast", a.shape(), b.shape()))?;
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        let d = ad.iter().zip(bd).map(|(&x, &y)| binary_apply(kind, x, y)).collect();
        return Ok(Tensor::from_parts(out_shape, d));
    }
    let sa = strides_for(a.shape(), &out_shape);
    let sb = strides_for(b.shape(), &out_shape);
    let mut d = vec![T::zero(); numel(&out_shape)];
    for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
        d[o] = binary_apply(kind, ad[ia], bd[ib]);
    });
    Ok(Tensor::from_parts(out_shape, d))
}

fn binary_backward<T: Float>(
    kind: Binary,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let out_shape = g.shape();
    let sa = strides_for(a.shape(), out_shape);
    let sb = strides_for(b.shape(), out_shape);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
        let (x, y, up) = (ad[ia], bd[ib], gd[o]);
        match kind {
            Binary::Add => {
                ga[ia] += up;
                gb[ib] += up;
            }
            Binary::Sub => {
                ga[ia] += up;
                gb[ib] -= up;
            }
            Binary::Mul => {
                ga[ia] += up * y;
                gb[ib] += up * x;
            }
            Binary::Div => {
                ga[ia] += up / y;
                gb[ib] -= up * x / (y * y);
            }
        }
    });
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

fn sqrt_2_over_pi<T: Float>() -> T {
    T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt())
}

const GELU_CUBIC: f64 = 0.044715;

pub(crate) fn gelu_scalar<T: Float>(x: T) -> T {
    let c = sqrt_2_over_pi::<T>();
    let k = T::from_f64_lossy(GELU_CUBIC);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn softplus_scalar<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn unary_apply<T: Float>(kind: Unary, x: T) -> T {
    match kind {
        Unary::Gelu => gelu_scalar(x),
        Unary::Tanh => x.tanh(),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Softplus => softplus_scalar(x),
    }
}

fn unary_derivative<T: Float>(kind: Unary, x: T, y: T) -> T {
    match kind {
        Unary::Gelu => {
            let c = sqrt_2_over_pi::<T>();
            let k = T::from_f64_lossy(GELU_CUBIC);
            let three = T::from_f64_lossy(3.0);
            let half = T::from_f64_lossy(0.5);
            let t = (c * (x + k * x * x * x)).tanh();
            half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
        }
        Unary::Tanh => T::one() - y * y,
        Unary::Exp => y,
        Unary::Log => T::one() / x,
        Unary::Softplus => T::one() / (T::one() + (-x).exp()),
    }
}

// ---------------------------------------------------------------------------
// Matrix multiplication

struct MatMulPlan {
    out_shape: Vec<usize>,
    batch: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    p: usize,
    q: usize,
    r: usize,
    /// `b` is a single matrix, so `a`'s batch axes can be folded into rows.
    flat: bool,
}

fn matmul_plan(a: &[usize], b: &[usize], trans_b: bool) -> Result<MatMulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::dim("matmul", a, b));
    }
    let (p, q) = (a[a.len() - 2], a[a.len() - 1]);
    let (bq, r) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if q != bq {
        return Err(Error::dim("matmul", a, b));
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = broadcast_shape(ab, bb).ok_or_else(|| Error::dim("matmul", a, b))?;
    let mut out_shape = batch.clone();
    out_shape.extend([p, r]);
    let sa = strides_for(ab, &batch);
    let sb = strides_for(bb, &batch);
    let flat = bb.is_empty() && ab == batch.as_slice();
    Ok(MatMulPlan {
        out_shape,
        batch,
        sa,
        sb,
        p,
        q,
        r,
        flat,
    })
}

fn b_view<T>(data: &[T], q: usize, r: usize, trans_b: bool) -> MatView<'_, T> {
    if trans_b {
        MatView::new(data, r, q).t()
    } else {
        MatView::new(data, q, r)
    }
}

fn matmul_forward<T: Float>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let plan = matmul_plan(a.shape(), b.shape(), trans_b)?;
    let (p, q, r) = (plan.p, plan.q, plan.r);
    let mut out = vec![T::zero(); numel(&plan.out_shape)];
    if plan.flat {
        let rows = a.len() / q;
        let av = MatView::new(a.data(), rows, q);
        gemm(T::one(), av, b_view(b.data(), q, r, trans_b), T::zero(), &mut out);
    } else {
        let (ad, bd) = (a.data(), b.data());
        for_each_broadcast(&plan.batch, &plan.sa, &plan.sb, |o, ia, ib| {
            let av = MatView::new(&ad[ia * p * q..(ia + 1) * p * q], p, q);
            let bv = b_view(&bd[ib * q * r..(ib + 1) * q * r], q, r, trans_b);
            gemm(T::one(), av, bv, T::zero(), &mut out[o * p * r..(o + 1) * p * r]);
        });
    }
    Ok(Tensor::from_parts(plan.out_shape, out))
}

fn matmul_backward<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_b: bool,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let plan = matmul_plan(a.shape(), b.shape(), trans_b).expect("validated in forward");
    let (p, q, r) = (plan.p, plan.q, plan.r);
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let step = |gc: &[T], am: &[T], bm: &[T], ga: &mut [T], gb: &mut [T], rows: usize| {
        let gv = MatView::new(gc, rows, r);
        let av = MatView::new(am, rows, q);
        // dA = dC · op(B)ᵀ
        gemm(T::one(), gv, b_view(bm, q, r, trans_b).t(), T::one(), ga);
        if trans_b {
            // B is stored r × q: dB = dCᵀ · A
            gemm(T::one(), gv.t(), av, T::one(), gb);
        } else {
            // dB = Aᵀ · dC
            gemm(T::one(), av.t(), gv, T::one(), gb);
        }
    };
    if plan.flat {
        let rows = a.len() / q;
        step(gd, ad, bd, &mut ga, &mut gb, rows);
    } else {
        for_each_broadcast(&plan.batch, &plan.sa, &plan.sb, |o, ia, ib| {
            step(
                &gd[o * p * r..(o + 1) * p * r],
                &ad[ia * p * q..(ia + 1) * p * q],
                &bd[ib * q * r..(ib + 1) * q * r],
                &mut ga[ia * p * q..(ia + 1) * p * q],
                &mut gb[ib * q * r..(ib + 1) * q * r],
                p,
            );
        });
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

// ---------------------------------------------------------------------------
// Softmax, layer norm, permutation

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn softmax_forward<T: Float>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for k in 0..len {
                let e = (xd[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / sum;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

fn softmax_backward<T: Float>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..len {
                out[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

type LayerNormOut<T> = (Tensor<T>, Vec<T>, Vec<T>);

fn layer_norm_forward<T: Float>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> LayerNormOut<T> {
    let width = *x.shape().last().unwrap();
    let rows = x.len() / width;
    let n = T::from_usize(width).unwrap();
    let (xd, gd, bd) = (x.data(), gain.data(), bias.data());
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &xd[r * width..(r + 1) * width];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for (k, &v) in row.iter().enumerate() {
            out[r * width + k] = (v - mean) * rstd * gd[k] + bd[k];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (Tensor::from_parts(x.shape().to_vec(), out), means, rstds)
}

fn layer_norm_backward<T: Float>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    means: &[T],
    rstds: &[T],
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let width = *x.shape().last().unwrap();
    let rows = x.len() / width;
    let n = T::from_usize(width).unwrap();
    let (xd, gnd, gd) = (x.data(), gain.data(), g.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gg = vec![T::zero(); width];
    let mut gb = vec![T::zero(); width];
    let mut xhat = vec![T::zero(); width];
    let mut dxhat = vec![T::zero(); width];
    for r in 0..rows {
        let (mean, rstd) = (means[r], rstds[r]);
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for k in 0..width {
            let up = gd[r * width + k];
            xhat[k] = (xd[r * width + k] - mean) * rstd;
            dxhat[k] = up * gnd[k];
            gg[k] += up * xhat[k];
            gb[k] += up;
            sum_d += dxhat[k];
            sum_dx += dxhat[k] * xhat[k];
        }
        for k in 0..width {
            gx[r * width + k] = rstd / n * (n * dxhat[k] - sum_d - xhat[k] * sum_dx);
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(vec![width], gg),
        Tensor::from_parts(vec![width], gb),
    )
}

fn permute<T: Float>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides = strides_for(shape, shape);
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let zeros = vec![0; out_shape.len()];
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for_each_broadcast(&out_shape, &strides, &zeros, |o, i, _| out[o] = xd[i]);
    Tensor::from_parts(out_shape, out)
}

// ---------------------------------------------------------------------------
// Public surface on Var

impl<'g, T: Float> Var<'g, T> {
    fn val(&self) -> std::cell::Ref<'_, Tensor<T>> {
        std::cell::Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    fn same_graph(&self, other: &Var<'g, T>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "variables belong to different graphs"
        );
    }

    fn binary(self, kind: Binary, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other);
        let value = binary_forward(kind, &self.val(), &other.val())?;
        self.graph.push(value, Op::Binary(kind, self.id, other.id))
    }

    fn unary(self, kind: Unary) -> Result<Var<'g, T>> {
        let value = self.val().map(|v| unary_apply(kind, v));
        self.graph.push(value, Op::Unary(kind, self.id))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Add, other)
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Sub, other)
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Mul, other)
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Binary::Div, other)
    }

    pub fn scale(self, c: T) -> Result<Var<'g, T>> {
        let value = self.val().map(|v| v * c);
        self.graph.push(value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'g, T>> {
        let value = self.val().map(|v| v + c);
        self.graph.push(value, Op::AddScalar(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Var<'g, T>> {
        self.unary(Unary::Gelu)
    }

    pub fn tanh(self) -> Result<Var<'g, T>> {
        self.unary(Unary::Tanh)
    }

    pub fn exp(self) -> Result<Var<'g, T>> {
        self.unary(Unary::Exp)
    }

    pub fn log(self) -> Result<Var<'g, T>> {
        self.unary(Unary::Log)
    }

    pub fn softplus(self) -> Result<Var<'g, T>> {
        self.unary(Unary::Softplus)
    }

    /// `[.., p, q] × [.., q, r]` with broadcast batch axes.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other);
        let value = matmul_forward(&self.val(), &other.val(), false)?;
        self.graph.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b: false,
            },
        )
    }

    /// `[.., p, q] × [.., r, q]ᵀ` without materializing the transpose.
    pub fn matmul_nt(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other);
        let value = matmul_forward(&self.val(), &other.val(), true)?;
        self.graph.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b: true,
            },
        )
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let value = {
            let x = self.val();
            if axis >= x.rank() {
                return Err(Error::Parameter(format!(
                    "softmax axis {axis} out of range for {:?}",
                    x.shape()
                )));
            }
            softmax_forward(&x, axis)
        };
        self.graph.push(
            value,
            Op::Softmax {
                input: self.id,
                axis,
            },
        )
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(self, gain: Var<'g, T>, bias: Var<'g, T>, eps: T) -> Result<Var<'g, T>> {
        self.same_graph(&gain);
        self.same_graph(&bias);
        let (value, mean, rstd) = {
            let (x, gv, bv) = (self.val(), gain.val(), bias.val());
            let width = *x.shape().last().unwrap_or(&0);
            if gv.shape() != [width] || bv.shape() != [width] {
                return Err(Error::dim("layer_norm", x.shape(), gv.shape()));
            }
            layer_norm_forward(&x, &gv, &bv, eps)
        };
        self.graph.push(
            value,
            Op::LayerNorm {
                input: self.id,
                gain: gain.id,
                bias: bias.id,
                mean,
                rstd,
            },
        )
    }

    /// Inverted dropout. Identity in [`Mode::Eval`] or when `p == 0`.
    pub fn dropout(self, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var<'g, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout p must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(self);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.val().len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let value = {
            let x = self.val();
            let d = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Tensor::from_parts(x.shape().to_vec(), d)
        };
        self.graph.push(
            value,
            Op::Dropout {
                input: self.id,
                mask: Arc::new(mask),
            },
        )
    }

    /// Row gather from a `[rows, ..]` table; output is `[ids_shape.., ..]`.
    pub fn gather(self, ids: &[usize], ids_shape: &[usize]) -> Result<Var<'g, T>> {
        if numel(ids_shape) != ids.len() || ids.is_empty() {
            return Err(Error::dim("gather", ids_shape, &[ids.len()]));
        }
        let value = {
            let table = self.val();
            if table.rank() < 1 {
                return Err(Error::dim("gather", table.shape(), ids_shape));
            }
            let rows = table.shape()[0];
            if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
                return Err(Error::Input(format!(
                    "gather index {bad} out of range for table with {rows} rows"
                )));
            }
            let width = numel(&table.shape()[1..]);
            let mut out = Vec::with_capacity(ids.len() * width);
            for &i in ids {
                out.extend_from_slice(&table.data()[i * width..(i + 1) * width]);
            }
            let mut shape = ids_shape.to_vec();
            shape.extend_from_slice(&table.shape()[1..]);
            Tensor::from_parts(shape, out)
        };
        self.graph.push(
            value,
            Op::Gather {
                table: self.id,
                ids: Arc::new(ids.to_vec()),
            },
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let value = self.val().reshape(shape)?;
        self.graph.push(value, Op::Reshape(self.id))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let value = {
            let x = self.val();
            let mut seen = vec![false; x.rank()];
            if perm.len() != x.rank() || perm.iter().any(|&p| p >= x.rank() || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::dim("permute", x.shape(), perm));
            }
            permute(&x, perm)
        };
        self.graph.push(
            value,
            Op::Permute {
                input: self.id,
                perm: perm.to_vec(),
            },
        )
    }

    /// Swaps the two trailing axes.
    pub fn transpose(self) -> Result<Var<'g, T>> {
        let rank = self.val().rank();
        if rank < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 1, rank - 2);
        self.permute(&perm)
    }

    pub fn sum(self) -> Result<Var<'g, T>> {
        let value = Tensor::scalar(self.val().data().iter().copied().sum());
        self.graph.push(value, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Result<Var<'g, T>> {
        let value = {
            let x = self.val();
            let n = T::from_usize(x.len()).unwrap();
            Tensor::scalar(x.data().iter().copied().sum::<T>() / n)
        };
        self.graph.push(value, Op::MeanAll(self.id))
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let value = {
            let x = self.val();
            if axis >= x.rank() {
                return Err(Error::Parameter(format!("axis {axis} out of range for {:?}", x.shape())));
            }
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let xd = x.data();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += xd[base + i];
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            Tensor::from_parts(shape, out)
        };
        self.graph.push(
            value,
            Op::SumAxis {
                input: self.id,
                axis,
            },
        )
    }

    /// Mean negative log-likelihood of `targets` under a softmax over the
    /// last (class) axis; leading axes are flattened into rows.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'g, T>> {
        let (value, probs) = {
            let x = self.val();
            let classes = *x.shape().last().ok_or_else(|| Error::dim("cross_entropy", x.shape(), &[]))?;
            let rows = x.len() / classes;
            if rows != targets.len() {
                return Err(Error::dim("cross_entropy", x.shape(), &[targets.len()]));
            }
            if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
                return Err(Error::Input(format!("target class {bad} out of range for {classes} classes")));
            }
            let probs = softmax_forward(&x.reshape(&[rows, classes])?, 1).into_vec();
            let mut loss = T::zero();
            for (r, &t) in targets.iter().enumerate() {
                let logits = &x.data()[r * classes..(r + 1) * classes];
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                loss += lse - logits[t];
            }
            (Tensor::scalar(loss / T::from_usize(rows).unwrap()), probs)
        };
        self.graph.push(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: Arc::new(targets.to_vec()),
                probs,
            },
        )
    }

    /// Replaces entries where `mask` (broadcastable, shape `mask_shape`) is
    /// true with `value`.
    pub fn masked_fill(self, mask: &[bool], mask_shape: &[usize], value: T) -> Result<Var<'g, T>> {
        if numel(mask_shape) != mask.len() {
            return Err(Error::dim("masked_fill", mask_shape, &[mask.len()]));
        }
        let (out, expanded) = {
            let x = self.val();
            let shape = x.shape();
            if broadcast_shape(shape, mask_shape).as_deref() != Some(shape) {
                return Err(Error::dim("masked_fill", shape, mask_shape));
            }
            let sm = strides_for(mask_shape, shape);
            let zeros = vec![0; shape.len()];
            let mut expanded = vec![false; x.len()];
            let mut d = x.data().to_vec();
            for_each_broadcast(shape, &sm, &zeros, |o, im, _| {
                if mask[im] {
                    expanded[o] = true;
                    d[o] = value;
                }
            });
            (Tensor::from_parts(shape.to_vec(), d), expanded)
        };
        self.graph.push(
            out,
            Op::MaskedFill {
                input: self.id,
                mask: Arc::new(expanded),
            },
        )
    }
}

impl<T: Float> Graph<T> {
    /// Convenience for building small constants in tests and examples.
    pub fn constant_from(&self, shape: Vec<usize>, values: &[f64]) -> Result<Var<'_, T>> {
        Ok(self.constant(Tensor::from_f64(shape, values)?))
    }
}
