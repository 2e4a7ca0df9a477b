use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower clamp applied to `q` before taking logarithms in [`cross_entropy`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let m = logits.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.widen() - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| T::narrow(e / total)).collect())
}

/// `H(p, q) = -sum_i p_i ln max(q_i, 1e-12)`.
pub fn cross_entropy<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::shape("cross_entropy", &[p.len()], &[q.len()]));
    }
    let h: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| pi.widen() != 0.0)
        .map(|(pi, qi)| -pi.widen() * qi.widen().max(LOG_CLAMP).ln())
        .sum();
    Ok(T::narrow(h))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn one_hot<T: Scalar>(class: usize, classes: usize) -> Vec<T> {
    let mut v = vec![T::zero(); classes];
    v[class] = T::one();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        assert!(softmax::<f32>(&[]).is_err());
    }

    #[test]
    fn softmax_large_logit_matches_high_precision_value() {
        // 1 / (1 + e^1000) underflows to exactly 0 in f64; e^-1000 is ~5e-435.
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        let p32 = softmax(&[1000.0f32, 0.0]).unwrap();
        assert!(p32.iter().all(|v| v.is_finite()));
        assert_eq!(p32[0], 1.0);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cross_entropy(&[1.0f64, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let hand = -(0.3 * 0.6f64.ln() + 0.7 * 0.4f64.ln());
        assert_abs_diff_eq!(cross_entropy(&[0.3f64, 0.7], &[0.6, 0.4]).unwrap(), hand, epsilon = 1e-15);
        assert!(cross_entropy(&[1.0f64], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn clamp_keeps_one_hot_mismatch_finite() {
        let h = cross_entropy(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(h, -LOG_CLAMP.ln(), epsilon = 1e-9);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5f32, 0.5]), Some(0));
        assert_eq!(argmax(&[0.1f32, 0.7, 0.7]), Some(1));
        assert_eq!(argmax::<f32>(&[]), None);
    }
}
