//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in evaluation order. Calling
//! [`Tape::backward`] walks the record in reverse and accumulates vector-Jacobian
//! products into the nodes that lie on a path between a trainable leaf (or an
//! explicitly requested node) and the loss.

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvGeometry, GroupNormCache};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { trainable: bool },
    Conv2d { input: Var, weight: Var, geom: ConvGeometry },
    AddChannelBias { input: Var, bias: Var },
    GroupNorm { input: Var, gamma: Var, beta: Var, groups: usize, cache: GroupNormCache },
    Swish { input: Var },
    Relu { input: Var },
    GlobalAvgPool { input: Var },
    Flatten { input: Var },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    Sum { input: Var },
    SoftmaxCrossEntropy { logits: Var, targets: Tensor<T>, probs: Vec<f64> },
    WeightedSum { input: Var, weights: Vec<f64> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { input, weight, .. } => vec![input, weight],
            Op::AddChannelBias { input, bias } => vec![input, bias],
            Op::GroupNorm { input, gamma, beta, .. } => vec![input, gamma, beta],
            Op::Swish { input }
            | Op::Relu { input }
            | Op::GlobalAvgPool { input }
            | Op::Flatten { input }
            | Op::Scale { input, .. }
            | Op::Sum { input }
            | Op::WeightedSum { input, .. } => vec![input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AddChannelBias { .. } => "add_channel_bias",
            Op::GroupNorm { .. } => "group_norm",
            Op::Swish { .. } => "swish",
            Op::Relu { .. } => "relu",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Flatten { .. } => "flatten",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; gradients are only computed for it when requested.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Trainable leaf: always receives a gradient.
    pub fn parameter(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf { trainable: true })
    }

    /// 2-D convolution with "same" padding, input `[N,H,W,Cin]`, weight
    /// `[kh,kw,Cin,Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || stride == 0 {
            return Err(Error::shape("conv2d", &[0, 0, 0, ws.get(2).copied().unwrap_or(0)], &xs));
        }
        let geom = ConvGeometry {
            batch: xs[0],
            in_h: xs[1],
            in_w: xs[2],
            in_c: xs[3],
            k_h: ws[0],
            k_w: ws[1],
            out_c: ws[3],
            stride,
            pad: ws[0] / 2,
        };
        let out = kernels::conv2d_forward(&geom, self.value(input).data(), self.value(weight).data());
        let t = Tensor::new(vec![geom.batch, geom.out_h(), geom.out_w(), geom.out_c], out)?;
        self.push(t, Op::Conv2d { input, weight, geom })
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let c = *x.shape().last().unwrap_or(&0);
        if b.shape() != [c] {
            return Err(Error::shape("add_channel_bias", &[c], b.shape()));
        }
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (o, &bv) in chunk.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddChannelBias { input, bias })
    }

    /// Group normalisation over `[N, ..., C]` with per-channel affine terms.
    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let c = *shape.last().unwrap_or(&0);
        if shape.len() < 2 || groups == 0 || c % groups != 0 {
            return Err(Error::invalid(format!(
                "group_norm: {c} channels cannot be split into {groups} groups"
            )));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape("group_norm", &[c], self.value(gamma).shape()));
        }
        let batch = shape[0];
        let spatial = x.len() / (batch.max(1) * c.max(1));
        let (out, cache) = kernels::group_norm_forward(
            x.data(),
            batch,
            spatial,
            c,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::GroupNorm { input, gamma, beta, groups, cache })
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).map(|v| {
            let x = v.widen();
            T::narrow(x * sigmoid(x))
        });
        self.push(out, Op::Swish { input })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { input })
    }

    /// `[N,H,W,C] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", &[0, 0, 0, 0], s));
        }
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut out = Vec::with_capacity(n * c);
        for b in 0..n {
            let x_b = &x.data()[b * hw * c..][..hw * c];
            for ch in 0..c {
                let sum: f64 = (0..hw).map(|p| x_b[p * c + ch].widen()).sum();
                out.push(T::narrow(sum / hw as f64));
            }
        }
        let t = Tensor::new(vec![n, c], out)?;
        self.push(t, Op::GlobalAvgPool { input })
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let n = *x.shape().first().ok_or(Error::Empty("flatten"))?;
        let rest = x.len() / n.max(1);
        let t = x.clone().reshape(vec![n, rest])?;
        self.push(t, Op::Flatten { input })
    }

    /// `[N,D] x [D,C] -> [N,C]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &[sa.first().copied().unwrap_or(0), sb.first().copied().unwrap_or(0)], sa));
        }
        let (n, d, c) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * c];
        let mut acc = vec![0.0f64; c];
        for i in 0..n {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d {
                let x = av.data()[i * d + k].widen();
                for (a_j, &w) in acc.iter_mut().zip(&bv.data()[k * c..][..c]) {
                    *a_j += x * w.widen();
                }
            }
            for (o, &v) in out[i * c..][..c].iter_mut().zip(&acc) {
                *o = T::narrow(v);
            }
        }
        let t = Tensor::new(vec![n, c], out)?;
        self.push(t, Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let out = self.value(input).map(|v| T::narrow(v.widen() * factor));
        self.push(out, Op::Scale { input, factor })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(T::narrow(s)), Op::Sum { input })
    }

    /// `sum_i weights[i] * x[i]` over all elements, as a rank-0 tensor.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if weights.len() != x.len() {
            return Err(Error::shape("weighted_sum", &[x.len()], &[weights.len()]));
        }
        let s: f64 = x.data().iter().zip(&weights).map(|(v, w)| v.widen() * w).sum();
        self.push(Tensor::scalar(T::narrow(s)), Op::WeightedSum { input, weights })
    }

    /// Per-row cross-entropy `H(targets_n, softmax(logits_n))`, output `[N]`.
    ///
    /// Uses a max-shifted log-sum-exp so large logits do not overflow.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 2 || targets.shape() != z.shape() {
            return Err(Error::shape("softmax_cross_entropy", z.shape(), targets.shape()));
        }
        let (n, c) = (z.shape()[0], z.shape()[1]);
        let mut probs = Vec::with_capacity(n * c);
        let mut losses = Vec::with_capacity(n);
        for i in 0..n {
            let row = &z.data()[i * c..][..c];
            let t = &targets.data()[i * c..][..c];
            let m = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
            let se: f64 = row.iter().map(|v| (v.widen() - m).exp()).sum();
            let lse = m + se.ln();
            let mut loss = 0.0;
            for (&zj, &tj) in row.iter().zip(t) {
                let tj = tj.widen();
                if tj != 0.0 {
                    loss -= tj * (zj.widen() - lse);
                }
                probs.push((zj.widen() - lse).exp());
            }
            losses.push(T::narrow(loss));
        }
        let t = Tensor::new(vec![n], losses)?;
        self.push(t, Op::SoftmaxCrossEntropy { logits, targets, probs })
    }

    /// Softmax probabilities cached by a [`Tape::softmax_cross_entropy`] node.
    pub fn cached_probs(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes.get(var.0)?.op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Backpropagates from a single-element `loss` to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_with(loss, &[])
    }

    /// As [`Tape::backward`], additionally retaining gradients for `extra`
    /// nodes (e.g. intermediate activations or constant inputs).
    pub fn backward_with(&self, loss: Var, extra: &[Var]) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward requires a single-element loss"));
        }
        let n = loss.0 + 1;
        let mut relevant = vec![false; n];
        for (i, node) in self.nodes[..n].iter().enumerate() {
            relevant[i] = matches!(node.op, Op::Leaf { trainable: true })
                || extra.iter().any(|v| v.0 == i)
                || node.op.inputs().iter().any(|v| relevant[v.0]);
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));

        for i in (0..n).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.vjp(i, &g, &relevant)?;
            grads[i] = Some(g);
            for (var, contrib) in contributions {
                match &mut grads[var.0] {
                    Some(existing) => existing.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        for (i, slot) in grads.iter_mut().enumerate().take(n) {
            if !relevant[i] {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, i: usize, g: &Tensor<T>, relevant: &[bool]) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let wants = |v: Var| relevant[v.0];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d { input, weight, geom } => {
                let (dx, dw) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    wants(*input),
                    wants(*weight),
                );
                if let Some(dx) = dx {
                    out.push((*input, Tensor::new(self.value(*input).shape().to_vec(), dx)?));
                }
                if let Some(dw) = dw {
                    out.push((*weight, Tensor::new(self.value(*weight).shape().to_vec(), dw)?));
                }
            }
            Op::AddChannelBias { input, bias } => {
                if wants(*input) {
                    out.push((*input, g.clone()));
                }
                if wants(*bias) {
                    let c = self.value(*bias).len();
                    let mut acc = vec![0.0f64; c];
                    for chunk in g.data().chunks(c.max(1)) {
                        for (a, v) in acc.iter_mut().zip(chunk) {
                            *a += v.widen();
                        }
                    }
                    out.push((*bias, Tensor::from_f64(vec![c], &acc)?));
                }
            }
            Op::GroupNorm { input, gamma, beta, groups, cache } => {
                let x = self.value(*input);
                let c = *x.shape().last().unwrap();
                let batch = x.shape()[0];
                let spatial = x.len() / (batch.max(1) * c);
                let (dx, dgamma, dbeta) = kernels::group_norm_backward(
                    x.data(),
                    g.data(),
                    batch,
                    spatial,
                    c,
                    *groups,
                    self.value(*gamma).data(),
                    cache,
                );
                if wants(*input) {
                    out.push((*input, Tensor::new(x.shape().to_vec(), dx)?));
                }
                if wants(*gamma) {
                    out.push((*gamma, Tensor::new(vec![c], dgamma)?));
                }
                if wants(*beta) {
                    out.push((*beta, Tensor::new(vec![c], dbeta)?));
                }
            }
            Op::Swish { input } => {
                let d = self.value(*input).zip_map(g, |x, gv| {
                    let x = x.widen();
                    let s = sigmoid(x);
                    T::narrow(gv.widen() * (s + x * s * (1.0 - s)))
                })?;
                out.push((*input, d));
            }
            Op::Relu { input } => {
                let d = self
                    .value(*input)
                    .zip_map(g, |x, gv| if x > T::zero() { gv } else { T::zero() })?;
                out.push((*input, d));
            }
            Op::GlobalAvgPool { input } => {
                let s = self.value(*input).shape().to_vec();
                let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
                let inv = 1.0 / hw as f64;
                let mut d = Vec::with_capacity(n * hw * c);
                for b in 0..n {
                    let g_b = &g.data()[b * c..][..c];
                    for _ in 0..hw {
                        d.extend(g_b.iter().map(|v| T::narrow(v.widen() * inv)));
                    }
                }
                out.push((*input, Tensor::new(s, d)?));
            }
            Op::Flatten { input } => {
                let s = self.value(*input).shape().to_vec();
                out.push((*input, g.clone().reshape(s)?));
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, d, c) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let mut da = vec![T::zero(); n * d];
                    for i in 0..n {
                        let g_i = &g.data()[i * c..][..c];
                        for k in 0..d {
                            let w_k = &bv.data()[k * c..][..c];
                            let s: f64 = g_i.iter().zip(w_k).map(|(x, y)| x.widen() * y.widen()).sum();
                            da[i * d + k] = T::narrow(s);
                        }
                    }
                    out.push((*a, Tensor::new(vec![n, d], da)?));
                }
                if wants(*b) {
                    let mut db = vec![0.0f64; d * c];
                    for i in 0..n {
                        let g_i = &g.data()[i * c..][..c];
                        for k in 0..d {
                            let x = av.data()[i * d + k].widen();
                            for (dst, gv) in db[k * c..][..c].iter_mut().zip(g_i) {
                                *dst += x * gv.widen();
                            }
                        }
                    }
                    out.push((*b, Tensor::from_f64(vec![d, c], &db)?));
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    out.push((*a, g.clone()));
                }
                if wants(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    out.push((*a, g.zip_map(self.value(*b), |x, y| x * y)?));
                }
                if wants(*b) {
                    out.push((*b, g.zip_map(self.value(*a), |x, y| x * y)?));
                }
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.map(|v| T::narrow(v.widen() * factor))));
            }
            Op::Sum { input } => {
                let s = self.value(*input).shape().to_vec();
                out.push((*input, Tensor::full(s, g.item())));
            }
            Op::WeightedSum { input, weights } => {
                let s = self.value(*input).shape().to_vec();
                let gv = g.item().widen();
                let d: Vec<f64> = weights.iter().map(|w| w * gv).collect();
                out.push((*input, Tensor::from_f64(s, &d)?));
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let s = self.value(*logits).shape().to_vec();
                let c = s[1];
                let mut d = Vec::with_capacity(probs.len());
                for (i, g_i) in g.data().iter().enumerate() {
                    let t = &targets.data()[i * c..][..c];
                    let mass: f64 = t.iter().map(|v| v.widen()).sum();
                    let g_i = g_i.widen();
                    for (p, tj) in probs[i * c..][..c].iter().zip(t) {
                        d.push(T::narrow(g_i * (p * mass - tj.widen())));
                    }
                }
                out.push((*logits, Tensor::new(s, d)?));
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
