//! Per-example unlabelled weights updated by an influence estimate.

pub mod oracle;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::WeakAugmentConfig;
use crate::error::{Error, Result};
use crate::nn::functional::{one_hot, softmax};
use crate::nn::{ClassifierModel, GradientLayer, Tape, Tensor};
use crate::objective::{mean, per_example_ce, weak_views};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub step: usize,
    pub total: usize,
}

/// `eta = 5/2 (1 + cos(pi k / K))`.
pub fn eta_schedule(state: ScheduleState) -> Result<f64> {
    if state.total == 0 {
        return Err(Error::invalid("influence schedule needs K >= 1"));
    }
    if state.step > state.total {
        return Err(Error::invalid(format!("step {} beyond K = {}", state.step, state.total)));
    }
    let phase = std::f64::consts::PI * state.step as f64 / state.total as f64;
    Ok(2.5 * (1.0 + phase.cos()))
}

/// One weight per unlabelled example, indexed by its position in the pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights<T> {
    values: Vec<T>,
    lo: f64,
    hi: f64,
    init: f64,
}

impl<T: Scalar> LambdaWeights<T> {
    pub fn new(len: usize, init: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= init && init <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("weight init {init} outside clip range [{lo}, {hi}]")));
        }
        Ok(LambdaWeights {
            values: vec![T::narrow(init); len],
            lo,
            hi,
            init,
        })
    }

    /// Restores stored values, clipping nothing: out-of-range input is an error.
    pub fn from_values(values: Vec<T>, init: f64, lo: f64, hi: f64) -> Result<Self> {
        let mut w = Self::new(0, init, lo, hi)?;
        if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(&v.widen())) {
            return Err(Error::invalid(format!("stored weight {v} outside [{lo}, {hi}]")));
        }
        w.values = values;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn init(&self) -> f64 {
        self.init
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.values.get(index).map(|v| v.widen())
    }

    /// Sets a weight, clipped to the range.
    pub fn set(&mut self, index: usize, value: f64) -> Result<()> {
        let (lo, hi) = (self.lo, self.hi);
        let slot = self
            .values
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("weight index {index} out of range")))?;
        *slot = T::narrow(value.clamp(lo, hi));
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        let v = T::narrow(value.clamp(self.lo, self.hi));
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Weights for a batch of pool indices.
    pub fn gather(&self, indices: &[usize]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&i| self.get(i).ok_or_else(|| Error::invalid(format!("weight index {i} out of range for {}", self.len()))))
            .collect()
    }

    /// `(mean, min, max)`; zeros when empty.
    pub fn stats(&self) -> (f64, f64, f64) {
        if self.values.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in &self.values {
            let v = v.widen();
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        (sum / self.values.len() as f64, lo, hi)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    #[default]
    Identity,
    DampedDiagonal,
    /// Full head Gauss-Newton matrix plus damping, solved by Cholesky.
    GaussNewton,
}

pub const DEFAULT_DAMPING: f64 = 1e-2;

/// Stand-in for the inverse Hessian of the training loss.
#[derive(Clone, Debug)]
pub enum HessianApprox {
    Identity,
    /// `diag(H) + damping`, inverted elementwise.
    DampedDiagonal { diagonal: Vec<f64>, damping: f64 },
    /// Cholesky factor of `G + damping I`.
    GaussNewton(Cholesky<f64, Dyn>),
}

impl HessianApprox {
    pub fn damped_diagonal(diagonal: Vec<f64>, damping: f64) -> Result<Self> {
        if damping <= 0.0 || !damping.is_finite() {
            return Err(Error::Config(format!("damping must be positive, got {damping}")));
        }
        if diagonal.iter().any(|d| *d < 0.0 || !d.is_finite()) {
            return Err(Error::invalid("Gauss-Newton diagonal must be finite and non-negative"));
        }
        Ok(HessianApprox::DampedDiagonal { diagonal, damping })
    }

    /// `matrix` is row-major `n x n`.
    pub fn gauss_newton(matrix: Vec<f64>, n: usize, damping: f64) -> Result<Self> {
        if damping <= 0.0 || !damping.is_finite() {
            return Err(Error::Config(format!("damping must be positive, got {damping}")));
        }
        if matrix.len() != n * n {
            return Err(Error::shape("HessianApprox::gauss_newton", &[n, n], &[matrix.len()]));
        }
        let m = DMatrix::from_row_slice(n, n, &matrix) + DMatrix::identity(n, n) * damping;
        Cholesky::new(m)
            .map(HessianApprox::GaussNewton)
            .ok_or_else(|| Error::NonConvergence("damped Gauss-Newton matrix is not positive definite".into()))
    }

    /// Builds the requested approximation from head inputs, softmax rows and
    /// per-example loss weights of the training batch.
    pub fn build(mode: HessianMode, features: &[Vec<f64>], probs: &[Vec<f64>], weights: &[f64], damping: f64) -> Result<Self> {
        match mode {
            HessianMode::Identity => Ok(HessianApprox::Identity),
            HessianMode::DampedDiagonal => Self::damped_diagonal(gauss_newton_diagonal(features, probs, weights)?, damping),
            HessianMode::GaussNewton => {
                let (m, n) = gauss_newton_matrix(features, probs, weights)?;
                Self::gauss_newton(m, n, damping)
            }
        }
    }

    /// `H^-1 g`.
    pub fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        match self {
            HessianApprox::Identity => Ok(g.to_vec()),
            HessianApprox::DampedDiagonal { diagonal, damping } => {
                if diagonal.len() != g.len() {
                    return Err(Error::shape("HessianApprox::solve", &[diagonal.len()], &[g.len()]));
                }
                Ok(g.iter().zip(diagonal).map(|(g, d)| g / (d + damping)).collect())
            }
            HessianApprox::GaussNewton(chol) => {
                if chol.l_dirty().nrows() != g.len() {
                    return Err(Error::shape("HessianApprox::solve", &[chol.l_dirty().nrows()], &[g.len()]));
                }
                Ok(chol.solve(&DVector::from_column_slice(g)).as_slice().to_vec())
            }
        }
    }
}

/// Cross-entropy gradient of the head (weight `D x C` row-major, then bias)
/// for one example with head input `h`, softmax `p` and target `t`.
pub fn head_gradient(h: &[f64], p: &[f64], label: usize) -> Vec<f64> {
    let dz: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| pc - if c == label { 1.0 } else { 0.0 })
        .collect();
    let mut out = Vec::with_capacity(h.len() * dz.len() + dz.len());
    for &hv in h {
        out.extend(dz.iter().map(|g| hv * g));
    }
    out.extend_from_slice(&dz);
    out
}

fn check_gn_inputs(features: &[Vec<f64>], probs: &[Vec<f64>], weights: &[f64]) -> Result<(usize, usize)> {
    if features.is_empty() || features.len() != probs.len() || features.len() != weights.len() {
        return Err(Error::shape("gauss_newton", &[features.len(), probs.len()], &[weights.len()]));
    }
    Ok((features[0].len(), probs[0].len()))
}

/// Diagonal of the head's weighted Gauss-Newton matrix
/// `sum_b w_b J_b^T (diag p_b - p_b p_b^T) J_b`.
pub fn gauss_newton_diagonal(features: &[Vec<f64>], probs: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let (d, c) = check_gn_inputs(features, probs, weights)?;
    let mut diag = vec![0.0; d * c + c];
    for ((h, p), w) in features.iter().zip(probs).zip(weights) {
        for (j, &hj) in h.iter().chain(std::iter::once(&1.0)).enumerate() {
            for (k, &pk) in p.iter().enumerate() {
                diag[j * c + k] += w * hj * hj * pk * (1.0 - pk);
            }
        }
    }
    Ok(diag)
}

/// The full weighted head Gauss-Newton matrix (row-major) and its side.
/// For softmax cross-entropy this is the exact head Hessian.
pub fn gauss_newton_matrix(features: &[Vec<f64>], probs: &[Vec<f64>], weights: &[f64]) -> Result<(Vec<f64>, usize)> {
    let (d, c) = check_gn_inputs(features, probs, weights)?;
    let n = (d + 1) * c;
    let mut m = vec![0.0; n * n];
    for ((h, p), &w) in features.iter().zip(probs).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let xt: Vec<f64> = h.iter().cloned().chain(std::iter::once(1.0)).collect();
        for (j1, x1) in xt.iter().enumerate() {
            for k1 in 0..c {
                let row = (j1 * c + k1) * n;
                for (j2, x2) in xt.iter().enumerate() {
                    for k2 in 0..c {
                        let s = if k1 == k2 { p[k1] } else { 0.0 } - p[k1] * p[k2];
                        m[row + j2 * c + k2] += w * x1 * x2 * s;
                    }
                }
            }
        }
    }
    Ok((m, n))
}

/// `l_v`: mean cross-entropy on weak views of a validation batch.
pub fn validation_loss<T: Scalar, R: Rng + ?Sized>(
    model: &ClassifierModel<T>,
    images: &Tensor<T>,
    labels: &[usize],
    weak: &WeakAugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("validation batch"));
    }
    let views = weak_views(images, weak, rng)?;
    mean(&per_example_ce(&model.probabilities(&views)?, labels)?, "validation batch")
}

/// `l_v` and its gradient restricted to `layer`, on already-augmented views.
pub fn validation_gradient<T: Scalar>(
    model: &ClassifierModel<T>,
    views: &Tensor<T>,
    labels: &[usize],
    layer: GradientLayer,
) -> Result<(f64, Vec<f64>)> {
    if labels.is_empty() {
        return Err(Error::Empty("validation batch"));
    }
    let n = labels.len();
    let classes = model.spec().classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    let mut tape = Tape::new();
    let graph = model.forward(&mut tape, views)?;
    let z = tape.value(graph.logits).to_f64_vec();
    let probs: Vec<Vec<f64>> = z
        .chunks(classes)
        .map(softmax)
        .collect::<Result<_>>()?;
    let loss = mean(&per_example_ce(&probs, labels)?, "validation batch")?;
    let grad = match layer {
        GradientLayer::Final => {
            let h = tape.value(graph.features).to_f64_vec();
            let d = h.len() / n;
            let mut grad = vec![0.0; d * classes + classes];
            for (b, (p, &l)) in probs.iter().zip(labels).enumerate() {
                for (g, v) in grad.iter_mut().zip(head_gradient(&h[b * d..][..d], p, l)) {
                    *g += v / n as f64;
                }
            }
            grad
        }
        GradientLayer::Penultimate => {
            let mut targets = Vec::with_capacity(n * classes);
            for &l in labels {
                targets.extend(one_hot::<T>(l, classes));
            }
            let targets = Tensor::new(vec![n, classes], targets)?;
            let slices = model.per_example_grads(views, &targets, &vec![1.0 / n as f64; n], layer)?;
            let mut grad = vec![0.0; slices[0].len()];
            for s in &slices {
                for (g, v) in grad.iter_mut().zip(s) {
                    *g += v.widen();
                }
            }
            grad
        }
    };
    Ok((loss, grad))
}

/// `lambda_b += eta <g_v, H^-1 g_b>` for each in-batch index, then clip.
/// Returns the raw (unclipped) increments.
pub fn lambda_update<T: Scalar>(
    lambda: &mut LambdaWeights<T>,
    eta: f64,
    val_grad: &[f64],
    unlabelled_grads: &[Vec<f64>],
    indices: &[usize],
    hessian: &HessianApprox,
) -> Result<Vec<f64>> {
    if unlabelled_grads.len() != indices.len() {
        return Err(Error::shape("lambda_update", &[indices.len()], &[unlabelled_grads.len()]));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= lambda.len()) {
        return Err(Error::invalid(format!("weight index {bad} out of range for {}", lambda.len())));
    }
    let direction = hessian.solve(val_grad)?;
    let mut increments = Vec::with_capacity(indices.len());
    for g in unlabelled_grads {
        if g.len() != direction.len() {
            return Err(Error::shape("lambda_update", &[direction.len()], &[g.len()]));
        }
        let dot: f64 = direction.iter().zip(g).map(|(a, b)| a * b).sum();
        increments.push(eta * dot);
    }
    if eta == 0.0 {
        return Ok(increments);
    }
    for (&i, inc) in indices.iter().zip(&increments) {
        let current = lambda.get(i).expect("checked above");
        lambda.set(i, current + inc)?;
    }
    Ok(increments)
}
