//! Supervised, pseudo-label and combined losses.
//!
//! The pure functions work on probability rows (`f64`) so they can be checked
//! by hand; the model-level wrappers draw augmented views and run forward
//! passes; [`StepGraph`] records the differentiable total loss used by the
//! trainer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{strong_augment, weak_augment, CtaPolicy, TransformRecord, WeakAugmentConfig};
use crate::error::{Error, Result};
use crate::nn::functional::{argmax, cross_entropy, one_hot};
use crate::nn::{ClassifierModel, ModelGraph, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// `B` labelled images `[B,H,W,C]` with class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledBatch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// `mu * B` unlabelled images with their global indices into the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabelledBatch<T> {
    pub images: Tensor<T>,
    pub indices: Vec<usize>,
}

impl<T: Scalar> LabelledBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self, classes: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Empty("labelled batch"));
        }
        if self.images.shape().first() != Some(&self.labels.len()) {
            return Err(Error::shape("labelled batch", &[self.labels.len()], self.images.shape()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(())
    }
}

impl<T: Scalar> UnlabelledBatch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelBatch {
    /// Weak-view probabilities `q_b`.
    pub probs: Vec<Vec<f64>>,
    /// `argmax(q_b)`, lowest index on ties.
    pub labels: Vec<usize>,
    /// `max(q_b) >= tau`.
    pub mask: Vec<bool>,
}

impl PseudoLabelBatch {
    pub fn mask_rate(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_s: f64,
    pub loss_u: f64,
    pub loss_tot: f64,
    pub mask_rate: f64,
    /// Unreduced masked losses `1(max q_b >= tau) H(q^_b, p(A(u_b)))`.
    pub per_example_u: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("confidence threshold {tau} outside (0, 1]")))
    }
}

pub fn mean(values: &[f64], what: &'static str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `H(onehot(label_b), probs_b)` per row.
pub fn per_example_ce(probs: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
    if probs.len() != labels.len() {
        return Err(Error::shape("per_example_ce", &[labels.len()], &[probs.len()]));
    }
    probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            if l >= p.len() {
                return Err(Error::invalid(format!("label {l} out of range for {} classes", p.len())));
            }
            cross_entropy(&one_hot::<f64>(l, p.len()), p)
        })
        .collect()
}

pub fn pseudo_labels(weak_probs: &[Vec<f64>], tau: f64) -> Result<PseudoLabelBatch> {
    check_tau(tau)?;
    if weak_probs.is_empty() {
        return Err(Error::Empty("unlabelled batch"));
    }
    let mut labels = Vec::with_capacity(weak_probs.len());
    let mut mask = Vec::with_capacity(weak_probs.len());
    for q in weak_probs {
        let l = argmax(q).ok_or(Error::Empty("probability row"))?;
        labels.push(l);
        mask.push(q[l] >= tau);
    }
    Ok(PseudoLabelBatch {
        probs: weak_probs.to_vec(),
        labels,
        mask,
    })
}

/// `l_u` and its unreduced terms. Masked examples contribute zero but still
/// count in the `1/(mu B)` normaliser.
pub fn unsupervised_loss_from_probs(pseudo: &PseudoLabelBatch, strong_probs: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if strong_probs.len() != pseudo.labels.len() {
        return Err(Error::shape("unsupervised_loss", &[pseudo.labels.len()], &[strong_probs.len()]));
    }
    let ce = per_example_ce(strong_probs, &pseudo.labels)?;
    let per: Vec<f64> = ce.iter().zip(&pseudo.mask).map(|(&l, &m)| if m { l } else { 0.0 }).collect();
    Ok((mean(&per, "unlabelled batch")?, per))
}

pub fn total_loss_fixed(loss_s: f64, loss_u: f64, lambda: f64) -> f64 {
    loss_s + lambda * loss_u
}

/// `l_s + (1/(mu B)) sum_b lambda_b l_{u,b}` with `lambdas` aligned to
/// `per_example_u`.
pub fn total_loss_weighted(loss_s: f64, per_example_u: &[f64], lambdas: &[f64]) -> Result<f64> {
    if per_example_u.len() != lambdas.len() {
        return Err(Error::shape("total_loss_weighted", &[per_example_u.len()], &[lambdas.len()]));
    }
    let weighted: Vec<f64> = per_example_u.iter().zip(lambdas).map(|(l, w)| l * w).collect();
    Ok(loss_s + mean(&weighted, "unlabelled batch")?)
}

/// Applies `alpha` to every image of a batch.
pub fn weak_views<T: Scalar, R: Rng + ?Sized>(images: &Tensor<T>, config: &WeakAugmentConfig, rng: &mut R) -> Result<Tensor<T>> {
    let n = images.shape().first().copied().unwrap_or(0);
    let views = (0..n)
        .map(|i| weak_augment(&images.index_outer(i)?, config, rng))
        .collect::<Result<Vec<_>>>()?;
    if views.is_empty() {
        return Ok(images.clone());
    }
    Tensor::stack(&views)
}

/// Applies `A(alpha(x))` to every image of a batch.
pub fn strong_views<T: Scalar, R: Rng + ?Sized>(
    images: &Tensor<T>,
    weak: &WeakAugmentConfig,
    policy: &CtaPolicy,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<TransformRecord>)> {
    let n = images.shape().first().copied().unwrap_or(0);
    let mut views = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let w = weak_augment(&images.index_outer(i)?, weak, rng)?;
        let (s, r) = strong_augment(&w, policy, rng)?;
        views.push(s);
        records.push(r);
    }
    if views.is_empty() {
        return Ok((images.clone(), records));
    }
    Ok((Tensor::stack(&views)?, records))
}

/// `(1/B) sum_b H(p_b, p(y | alpha(x_b)))`.
pub fn supervised_loss_weak<T: Scalar, R: Rng + ?Sized>(
    model: &ClassifierModel<T>,
    batch: &LabelledBatch<T>,
    weak: &WeakAugmentConfig,
    rng: &mut R,
) -> Result<f64> {
    batch.check(model.spec().classes)?;
    let views = weak_views(&batch.images, weak, rng)?;
    mean(&per_example_ce(&model.probabilities(&views)?, &batch.labels)?, "labelled batch")
}

/// `(1/B) sum_b H(p_b, p(y | A(alpha(x_b))))`.
pub fn supervised_loss_strong<T: Scalar, R: Rng + ?Sized>(
    model: &ClassifierModel<T>,
    batch: &LabelledBatch<T>,
    weak: &WeakAugmentConfig,
    policy: &CtaPolicy,
    rng: &mut R,
) -> Result<f64> {
    batch.check(model.spec().classes)?;
    let (views, _) = strong_views(&batch.images, weak, policy, rng)?;
    mean(&per_example_ce(&model.probabilities(&views)?, &batch.labels)?, "labelled batch")
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnsupervisedOutput {
    pub loss_u: f64,
    pub pseudo: PseudoLabelBatch,
    pub per_example: Vec<f64>,
}

/// Pseudo-labels from the weak view, loss on the strong view.
pub fn unsupervised_loss<T: Scalar, R: Rng + ?Sized>(
    model: &ClassifierModel<T>,
    batch: &UnlabelledBatch<T>,
    tau: f64,
    weak: &WeakAugmentConfig,
    policy: &CtaPolicy,
    rng: &mut R,
) -> Result<UnsupervisedOutput> {
    check_tau(tau)?;
    if batch.is_empty() {
        return Err(Error::Empty("unlabelled batch"));
    }
    let weak_images = weak_views(&batch.images, weak, rng)?;
    let pseudo = pseudo_labels(&model.probabilities(&weak_images)?, tau)?;
    let (strong, _) = strong_views(&batch.images, weak, policy, rng)?;
    let (loss_u, per_example) = unsupervised_loss_from_probs(&pseudo, &model.probabilities(&strong)?)?;
    Ok(UnsupervisedOutput {
        loss_u,
        pseudo,
        per_example,
    })
}

/// One recorded forward pass over `[labelled views; unlabelled views]` with
/// per-example cross-entropies against labels and pseudo-labels.
pub struct StepGraph<T> {
    pub tape: Tape<T>,
    pub graph: ModelGraph,
    /// Per-example cross-entropy, `[B + U]`.
    pub ce: Var,
    pub labelled: usize,
    pub unlabelled: usize,
    pub classes: usize,
}

impl<T: Scalar> StepGraph<T> {
    /// `labelled_views` and `unlabelled_views` are `[N,H,W,C]`; either may
    /// be `None` when empty. Pseudo-labels enter as constants.
    pub fn record(
        model: &ClassifierModel<T>,
        labelled_views: &Tensor<T>,
        labels: &[usize],
        unlabelled_views: Option<&Tensor<T>>,
        pseudo_labels: &[usize],
    ) -> Result<Self> {
        let classes = model.spec().classes;
        let mut rows = Vec::with_capacity(labels.len() + pseudo_labels.len());
        rows.extend((0..labels.len()).map(|i| labelled_views.index_outer(i)).collect::<Result<Vec<_>>>()?);
        if let Some(u) = unlabelled_views {
            if u.shape().first() != Some(&pseudo_labels.len()) {
                return Err(Error::shape("StepGraph", &[pseudo_labels.len()], u.shape()));
            }
            rows.extend((0..pseudo_labels.len()).map(|i| u.index_outer(i)).collect::<Result<Vec<_>>>()?);
        } else if !pseudo_labels.is_empty() {
            return Err(Error::invalid("pseudo-labels given without unlabelled views"));
        }
        if rows.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let images = Tensor::stack(&rows)?;
        let mut targets = Vec::with_capacity(rows.len() * classes);
        for &l in labels.iter().chain(pseudo_labels) {
            if l >= classes {
                return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
            }
            targets.extend(one_hot::<T>(l, classes));
        }
        let targets = Tensor::new(vec![rows.len(), classes], targets)?;
        let mut tape = Tape::new();
        let graph = model.forward(&mut tape, &images)?;
        let ce = tape.softmax_cross_entropy(graph.logits, targets)?;
        Ok(StepGraph {
            tape,
            graph,
            ce,
            labelled: labels.len(),
            unlabelled: pseudo_labels.len(),
            classes,
        })
    }

    pub fn ce_values(&self) -> Vec<f64> {
        self.tape.value(self.ce).to_f64_vec()
    }

    /// Softmax rows, in batch order.
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.tape
            .cached_probs(self.ce)
            .expect("ce node caches probabilities")
            .chunks(self.classes)
            .map(|r| r.to_vec())
            .collect()
    }

    /// Head inputs `h_b`, in batch order.
    pub fn features(&self) -> Vec<Vec<f64>> {
        let h = self.tape.value(self.graph.features);
        let n = self.labelled + self.unlabelled;
        h.to_f64_vec().chunks(h.len() / n).map(|r| r.to_vec()).collect()
    }

    /// Records `sum_i weights[i] ce_i` and returns its node.
    pub fn weighted_loss(&mut self, weights: Vec<f64>) -> Result<Var> {
        self.tape.weighted_sum(self.ce, weights)
    }
}

/// Loss weights for [`StepGraph::weighted_loss`]: `1/B` for labelled rows and
/// `lambda_b * mask_b / (mu B)` for unlabelled rows, where `unlabelled_total`
/// is `mu B` (rows beyond the recorded ones were masked out).
pub fn step_weights(labelled: usize, unlabelled_weights: &[f64], unlabelled_total: usize) -> Vec<f64> {
    let mut w = vec![1.0 / labelled as f64; labelled];
    w.extend(unlabelled_weights.iter().map(|l| l / unlabelled_total as f64));
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_computed_unsupervised_loss() {
        let pseudo = pseudo_labels(&[vec![0.97, 0.03], vec![0.6, 0.4]], 0.95).unwrap();
        assert_eq!(pseudo.labels, vec![0, 0]);
        assert_eq!(pseudo.mask, vec![true, false]);
        let (lu, per) = unsupervised_loss_from_probs(&pseudo, &[vec![0.8, 0.2], vec![0.1, 0.9]]).unwrap();
        assert_abs_diff_eq!(per[0], -(0.8f64.ln()), epsilon = 1e-12);
        assert_eq!(per[1], 0.0);
        assert_abs_diff_eq!(lu, 0.11157177565710485, epsilon = 1e-6);
        assert_eq!(pseudo.mask_rate(), 0.5);
    }

    #[test]
    fn tau_one_masks_everything() {
        let pseudo = pseudo_labels(&[vec![0.999, 0.001], vec![0.3, 0.7]], 1.0).unwrap();
        let (lu, _) = unsupervised_loss_from_probs(&pseudo, &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(lu, 0.0);
        assert_eq!(pseudo.mask_rate(), 0.0);
        assert!(pseudo_labels(&[vec![0.5, 0.5]], 0.0).is_err());
        assert!(pseudo_labels(&[], 0.5).is_err());
    }

    #[test]
    fn one_hot_agreement_gives_zero_loss_and_full_mask() {
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let pseudo = pseudo_labels(&q, 0.95).unwrap();
        let (lu, _) = unsupervised_loss_from_probs(&pseudo, &q).unwrap();
        assert_eq!(lu, 0.0);
        assert_eq!(pseudo.mask_rate(), 1.0);
    }

    #[test]
    fn total_losses() {
        assert_eq!(total_loss_fixed(1.0, 0.5, 1.0), 1.5);
        assert_eq!(total_loss_fixed(0.3, 0.2, 0.0), 0.3);
        assert_abs_diff_eq!(total_loss_fixed(0.3, 0.2, 2.0), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(total_loss_weighted(0.1, &[0.2, 0.4], &[0.5, 2.0]).unwrap(), 0.55, epsilon = 1e-15);
        assert_eq!(total_loss_weighted(0.1, &[0.2, 0.4], &[0.0, 0.0]).unwrap(), 0.1);
        assert!(total_loss_weighted(0.1, &[0.2, 0.4], &[1.0]).is_err());
    }

    #[test]
    fn supervised_mean() {
        let probs = vec![vec![(-0.2f64).exp(), 1.0 - (-0.2f64).exp()], vec![1.0 - (-0.4f64).exp(), (-0.4f64).exp()]];
        let ce = per_example_ce(&probs, &[0, 1]).unwrap();
        assert_abs_diff_eq!(mean(&ce, "b").unwrap(), 0.3, epsilon = 1e-12);
        assert!(mean(&[], "b").is_err());
    }
}
