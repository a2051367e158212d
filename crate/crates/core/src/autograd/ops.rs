use std::rc::Rc;

use rand::Rng;

use super::tensor::Tensor;
use super::{TensorError, IGNORE};
use crate::scalar::Real;

/// Backward rule of a user-supplied operation: receives the input values,
/// the output value and the upstream gradient, returns one gradient per input.
pub type CustomBackward<T> = Rc<dyn Fn(&[Vec<T>], &[T], &[T]) -> Vec<Vec<T>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

pub(crate) enum Op<T: Real> {
    MatMul(Tensor<T>, Tensor<T>),
    BatchMatMul(Tensor<T>, Tensor<T>),
    Binary(BinaryOp, Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    Sum(Tensor<T>),
    Reshape(Tensor<T>),
    Permute(Tensor<T>, Vec<usize>),
    Softmax(Tensor<T>),
    Gelu(Tensor<T>),
    LayerNorm {
        x: Tensor<T>,
        gain: Tensor<T>,
        bias: Tensor<T>,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: Tensor<T>,
        targets: Vec<usize>,
        probs: Vec<T>,
        count: usize,
    },
    Embedding {
        table: Tensor<T>,
        ids: Vec<usize>,
    },
    Custom {
        name: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: CustomBackward<T>,
    },
}

impl<T: Real> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "batch_matmul",
            Op::Binary(BinaryOp::Add, ..) => "add",
            Op::Binary(BinaryOp::Sub, ..) => "sub",
            Op::Binary(BinaryOp::Mul, ..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Softmax(..) => "softmax",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Embedding { .. } => "embedding",
            Op::Custom { name, .. } => name,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::MatMul(a, b) | Op::BatchMatMul(a, b) | Op::Binary(_, a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::Softmax(x)
            | Op::Gelu(x) => vec![x],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Embedding { table, .. } => vec![table],
            Op::Custom { inputs, .. } => inputs.iter().collect(),
        }
    }

    /// Gradients w.r.t. each input, given the output value and its gradient.
    pub(crate) fn backward(&self, out_shape: &[usize], out: &[T], gout: &[T]) -> Vec<(Tensor<T>, Vec<T>)> {
        match self {
            Op::MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![T::zero(); m * k];
                let mut gb = vec![T::zero(); k * n];
                matmul_grads(&ad, &bd, gout, &mut ga, &mut gb, m, k, n);
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
            Op::BatchMatMul(a, b) => {
                let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let n = b.shape()[2];
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![T::zero(); batch * m * k];
                let mut gb = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    matmul_grads(
                        &ad[i * m * k..(i + 1) * m * k],
                        &bd[i * k * n..(i + 1) * k * n],
                        &gout[i * m * n..(i + 1) * m * n],
                        &mut ga[i * m * k..(i + 1) * m * k],
                        &mut gb[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
            Op::Binary(kind, a, b) => {
                let nb = b.len();
                let mut gb = vec![T::zero(); nb];
                let ga: Vec<T> = match kind {
                    BinaryOp::Add | BinaryOp::Sub => {
                        let sign = if *kind == BinaryOp::Sub { -T::one() } else { T::one() };
                        for (i, g) in gout.iter().enumerate() {
                            gb[i % nb] += sign * *g;
                        }
                        gout.to_vec()
                    }
                    BinaryOp::Mul => {
                        let (ad, bd) = (a.data(), b.data());
                        for (i, g) in gout.iter().enumerate() {
                            gb[i % nb] += *g * ad[i];
                        }
                        gout.iter().enumerate().map(|(i, g)| *g * bd[i % nb]).collect()
                    }
                };
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
            Op::Scale(x, c) => vec![(x.clone(), gout.iter().map(|g| *g * *c).collect())],
            Op::Sum(x) => vec![(x.clone(), vec![gout[0]; x.len()])],
            Op::Reshape(x) => vec![(x.clone(), gout.to_vec())],
            Op::Permute(x, axes) => {
                // Scatter back through the forward index map.
                let map = permute_index_map(x.shape(), axes);
                let mut gx = vec![T::zero(); x.len()];
                for (o, src) in map.iter().enumerate() {
                    gx[*src] = gout[o];
                }
                vec![(x.clone(), gx)]
            }
            Op::Softmax(x) => {
                let n = *out_shape.last().unwrap();
                let mut gx = vec![T::zero(); out.len()];
                for ((y, gy), gxr) in out.chunks(n).zip(gout.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: T = y.iter().zip(gy).map(|(a, b)| *a * *b).sum();
                    for j in 0..n {
                        gxr[j] = y[j] * (gy[j] - dot);
                    }
                }
                vec![(x.clone(), gx)]
            }
            Op::Gelu(x) => {
                let xd = x.data();
                let gx = xd.iter().zip(gout).map(|(v, g)| *g * gelu_derivative(*v)).collect();
                vec![(x.clone(), gx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = *out_shape.last().unwrap();
                let df = T::lit(d as f64);
                let gd = gain.data();
                let mut gx = vec![T::zero(); out.len()];
                let mut gg = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                for (row, ((xh, gy), gxr)) in normalized.chunks(d).zip(gout.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for j in 0..d {
                        let dxh = gy[j] * gd[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                        gg[j] += gy[j] * xh[j];
                        gbias[j] += gy[j];
                    }
                    let s = inv_std[row] / df;
                    for j in 0..d {
                        let dxh = gy[j] * gd[j];
                        gxr[j] = s * (df * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                vec![(x.clone(), gx), (gain.clone(), gg), (bias.clone(), gbias)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = logits.shape()[1];
                let mut gl = vec![T::zero(); probs.len()];
                if *count > 0 {
                    let scale = gout[0] / T::lit(*count as f64);
                    for (row, &t) in targets.iter().enumerate() {
                        if t == IGNORE {
                            continue;
                        }
                        for j in 0..c {
                            gl[row * c + j] = probs[row * c + j] * scale;
                        }
                        gl[row * c + t] -= scale;
                    }
                }
                vec![(logits.clone(), gl)]
            }
            Op::Embedding { table, ids } => {
                let d = table.shape()[1];
                let mut gt = vec![T::zero(); table.len()];
                for (pos, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += gout[pos * d + j];
                    }
                }
                vec![(table.clone(), gt)]
            }
            Op::Custom { inputs, backward, .. } => {
                let values: Vec<Vec<T>> = inputs.iter().map(Tensor::to_vec).collect();
                let grads = backward(&values, out, gout);
                inputs.iter().cloned().zip(grads).collect()
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn matmul_grads<T: Real>(a: &[T], b: &[T], gc: &[T], ga: &mut [T], gb: &mut [T], m: usize, k: usize, n: usize) {
    // dA = dC·Bᵀ
    for i in 0..m {
        for p in 0..k {
            let mut acc = T::zero();
            for j in 0..n {
                acc += gc[i * n + j] * b[p * n + j];
            }
            ga[i * k + p] += acc;
        }
    }
    // dB = Aᵀ·dC
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                gb[p * n + j] += av * gc[i * n + j];
            }
        }
    }
}

fn matmul_into<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += av * brow[j];
            }
        }
    }
}

/// For each output position, the flat index of its source element.
fn permute_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(axes).map(|(i, &a)| i * strides[a]).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let inner = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_derivative<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let inner = c * (x + T::lit(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::lit(3.0 * 0.044715) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

fn ensure_finite<T: Real>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

/// `true` when `b` equals `a` or a trailing suffix of `a`'s shape.
fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl<T: Real> Tensor<T> {
    /// Two-dimensional matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data(), &other.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(vec![m, n], out, Op::MatMul(self.clone(), other.clone())))
    }

    /// Independent matrix products over the leading axis: `[B,m,k] × [B,k,n]`.
    pub fn batch_matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::shape("batch_matmul", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for i in 0..batch {
                matmul_into(
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(Tensor::from_op(
            vec![batch, m, n],
            out,
            Op::BatchMatMul(self.clone(), other.clone()),
        ))
    }

    /// Pointwise `self (op) other`. `other` may also be a trailing-suffix
    /// shape of `self`, in which case it is repeated over the leading axes
    /// (the only broadcast supported, e.g. a bias row over a batch).
    pub fn elementwise(&self, op: BinaryOp, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (sa, sb) = (self.shape(), other.shape());
        if !broadcastable(sa, sb) {
            return Err(TensorError::Broadcast {
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let nb = other.len();
        let out: Vec<T> = {
            let (ad, bd) = (self.data(), other.data());
            ad.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = bd[i % nb];
                    match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                    }
                })
                .collect()
        };
        Ok(Tensor::from_op(sa.to_vec(), out, Op::Binary(op, self.clone(), other.clone())))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.elementwise(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.elementwise(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.elementwise(BinaryOp::Mul, other)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, factor: T) -> Tensor<T> {
        let out = self.data().iter().map(|v| *v * factor).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Scale(self.clone(), factor))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        Tensor::from_op(vec![1], vec![total], Op::Sum(self.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        if shape.iter().product::<usize>() != self.len() || shape.contains(&0) {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape(self.clone())))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidAxes {
                shape: self.shape().to_vec(),
                axes: axes.to_vec(),
            });
        }
        let map = permute_index_map(self.shape(), axes);
        let out = {
            let d = self.data();
            map.iter().map(|&i| d[i]).collect()
        };
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Ok(Tensor::from_op(shape, out, Op::Permute(self.clone(), axes.to_vec())))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&self) -> Result<Tensor<T>, TensorError> {
        self.masked_softmax(None)
    }

    /// Softmax over the last axis restricted to positions where `keep` is
    /// `true`; dropped positions get exactly zero probability. A row with no
    /// kept position is all zeros.
    pub fn masked_softmax(&self, keep: Option<&[bool]>) -> Result<Tensor<T>, TensorError> {
        let n = *self.shape().last().unwrap();
        if let Some(mask) = keep {
            if mask.len() != self.len() {
                return Err(TensorError::MaskLength {
                    expected: self.len(),
                    got: mask.len(),
                });
            }
        }
        let out = {
            let d = self.data();
            ensure_finite("softmax", &d)?;
            let mut out = vec![T::zero(); d.len()];
            for (r, (xr, yr)) in d.chunks(n).zip(out.chunks_mut(n)).enumerate() {
                let kept = |j: usize| keep.is_none_or(|m| m[r * n + j]);
                let Some(max) = (0..n).filter(|&j| kept(j)).map(|j| xr[j]).reduce(T::max) else {
                    continue;
                };
                let mut total = T::zero();
                for j in (0..n).filter(|&j| kept(j)) {
                    let e = (xr[j] - max).exp();
                    yr[j] = e;
                    total += e;
                }
                for y in yr.iter_mut() {
                    *y /= total;
                }
            }
            out
        };
        Ok(Tensor::from_op(self.shape().to_vec(), out, Op::Softmax(self.clone())))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Tensor<T> {
        let out = self.data().iter().map(|v| gelu(*v)).collect();
        Tensor::from_op(self.shape().to_vec(), out, Op::Gelu(self.clone()))
    }

    /// Normalizes every position over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>, TensorError> {
        let d = *self.shape().last().unwrap();
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(), gain.shape()));
        }
        let df = T::lit(d as f64);
        let xd = self.data();
        let (gd, bd) = (gain.data(), bias.data());
        let rows = xd.len() / d;
        let mut normalized = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let xr = &xd[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<T>() / df;
            let var = xr.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / df;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let xh = (xr[j] - mean) * inv;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * gd[j] + bd[j];
            }
        }
        drop((xd, gd, bd));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                normalized,
                inv_std,
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `[t, c]` logits. Rows whose target is [`IGNORE`] are skipped; if every
    /// row is ignored the loss is zero with a zero gradient.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor<T>, TensorError> {
        let s = self.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(TensorError::shape("cross_entropy", s, &[targets.len()]));
        }
        let c = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t != IGNORE && t >= c) {
            return Err(TensorError::TargetOutOfRange { target: bad, classes: c });
        }
        let xd = self.data();
        ensure_finite("cross_entropy", &xd)?;
        let mut probs = vec![T::zero(); xd.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            let xr = &xd[r * c..(r + 1) * c];
            let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = xr.iter().map(|v| (*v - max).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (xr[j] - max).exp() / z;
            }
            if t != IGNORE {
                total += z.ln() + max - xr[t];
                count += 1;
            }
        }
        drop(xd);
        let loss = if count > 0 { total / T::lit(count as f64) } else { T::zero() };
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: self.clone(),
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Row lookup into a `[vocab, d]` table; output shape is `[ids.len(), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<T>, TensorError> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::shape("embedding", s, &[ids.len()]));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IdOutOfRange { id: bad, rows });
        }
        let out = {
            let td = self.data();
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(&td[id * d..(id + 1) * d]);
            }
            out
        };
        if ids.is_empty() {
            return Err(TensorError::InvalidShape(vec![0, d]));
        }
        Ok(Tensor::from_op(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`. Identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Result<Tensor<T>, TensorError> {
        if rate <= 0.0 {
            return Ok(self.clone());
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mul(&Tensor::new(self.shape(), mask)?)
    }

    /// Operation with a caller-supplied value and backward rule. Used by the
    /// gradient-check harness to validate itself.
    pub fn custom(
        name: &'static str,
        inputs: &[Tensor<T>],
        shape: &[usize],
        value: Vec<T>,
        backward: CustomBackward<T>,
    ) -> Result<Tensor<T>, TensorError> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: value.len(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            value,
            Op::Custom {
                name,
                inputs: inputs.to_vec(),
                backward,
            },
        ))
    }
}
