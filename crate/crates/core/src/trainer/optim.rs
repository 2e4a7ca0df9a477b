use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tensor};
use crate::scalar::Scalar;

/// `base (1 + cos(pi k / K)) / 2`.
pub fn cosine_lr(step: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("learning-rate schedule needs K >= 1"));
    }
    let phase = std::f64::consts::PI * step.min(total) as f64 / total as f64;
    Ok(base * (1.0 + phase.cos()) / 2.0)
}

/// SGD with momentum and coupled weight decay:
/// `v <- m v + g + wd theta; theta <- theta - lr v`.
/// Frozen parameters and their buffers are left untouched. A non-finite
/// gradient aborts before anything changes.
pub fn sgd_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::shape("sgd_step", &[params.len()], &[grads.len(), velocity.len()]));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        if p.frozen {
            continue;
        }
        if g.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::shape("sgd_step", p.value.shape(), g.shape()));
        }
        if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
            log::error!("non-finite gradient in {} at element {i}; step aborted", p.name);
            return Err(Error::NonFinite { op: "sgd_step" });
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.frozen {
            continue;
        }
        for ((theta, &gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let nv = momentum * vi.widen() + gi.widen() + weight_decay * theta.widen();
            *vi = T::narrow(nv);
            *theta = T::narrow(theta.widen() - lr * nv);
        }
    }
    Ok(())
}
