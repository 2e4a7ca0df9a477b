//! Brute-force influence on a convex toy problem.
//!
//! A softmax regression is retrained to convergence with and without a
//! perturbation of one unlabelled weight; the change in validation loss is
//! the reference the weight update is compared against. Everything here is
//! plain `f64` and independent of the autodiff tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyExample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// Training loss
/// `mean_l CE + (1/U) sum_i lambda_i CE_u(i) + l2/2 |theta|^2`,
/// with parameters laid out as weight (`dim x classes`, row-major) then bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyProblem {
    pub dim: usize,
    pub classes: usize,
    pub labelled: Vec<ToyExample>,
    /// Unlabelled examples with their pseudo-labels.
    pub unlabelled: Vec<ToyExample>,
    pub validation: Vec<ToyExample>,
    pub lambda: Vec<f64>,
    pub l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Stop when the gradient's max-norm drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-11,
            max_iterations: 100,
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ToyProblem {
    pub fn parameter_count(&self) -> usize {
        (self.dim + 1) * self.classes
    }

    fn probs(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let c = self.classes;
        let z: Vec<f64> = (0..c)
            .map(|k| theta[self.dim * c + k] + x.iter().enumerate().map(|(j, xj)| xj * theta[j * c + k]).sum::<f64>())
            .collect();
        softmax(&z)
    }

    fn ce(&self, theta: &[f64], e: &ToyExample) -> f64 {
        -self.probs(theta, &e.x)[e.label].max(1e-300).ln()
    }

    /// Weighted data terms: `(example, weight)`.
    fn terms(&self, lambda: &[f64]) -> Vec<(&ToyExample, f64)> {
        let nl = self.labelled.len() as f64;
        let nu = self.unlabelled.len().max(1) as f64;
        self.labelled
            .iter()
            .map(|e| (e, 1.0 / nl))
            .chain(self.unlabelled.iter().zip(lambda).map(|(e, l)| (e, l / nu)))
            .collect()
    }

    pub fn training_loss(&self, theta: &[f64], lambda: &[f64]) -> f64 {
        let data: f64 = self.terms(lambda).iter().map(|(e, w)| w * self.ce(theta, e)).sum();
        data + 0.5 * self.l2 * theta.iter().map(|t| t * t).sum::<f64>()
    }

    pub fn validation_loss(&self, theta: &[f64]) -> f64 {
        self.validation.iter().map(|e| self.ce(theta, e)).sum::<f64>() / self.validation.len() as f64
    }

    fn gradient_and_hessian(&self, theta: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (d, c) = (self.dim, self.classes);
        let p_count = self.parameter_count();
        let mut g: Vec<f64> = theta.iter().map(|t| self.l2 * t).collect();
        let mut h = vec![vec![0.0; p_count]; p_count];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = self.l2;
        }
        for (e, w) in self.terms(lambda) {
            if w == 0.0 {
                continue;
            }
            let p = self.probs(theta, &e.x);
            let xt: Vec<f64> = e.x.iter().cloned().chain(std::iter::once(1.0)).collect();
            for (j, xj) in xt.iter().enumerate() {
                for k in 0..c {
                    let r = p[k] - if k == e.label { 1.0 } else { 0.0 };
                    g[j * c + k] += w * xj * r;
                }
            }
            for (j1, x1) in xt.iter().enumerate() {
                for k1 in 0..c {
                    for (j2, x2) in xt.iter().enumerate() {
                        for k2 in 0..c {
                            let s = if k1 == k2 { p[k1] } else { 0.0 } - p[k1] * p[k2];
                            h[j1 * c + k1][j2 * c + k2] += w * x1 * x2 * s;
                        }
                    }
                }
            }
        }
        debug_assert_eq!(d * c + c, p_count);
        (g, h)
    }

    /// Minimises the training loss at weights `lambda` by damped Newton.
    pub fn fit(&self, lambda: &[f64], solver: &SolverConfig) -> Result<Vec<f64>> {
        if lambda.len() != self.unlabelled.len() {
            return Err(Error::shape("ToyProblem::fit", &[self.unlabelled.len()], &[lambda.len()]));
        }
        if self.labelled.is_empty() || self.validation.is_empty() {
            return Err(Error::Empty("toy problem data"));
        }
        let mut theta = vec![0.0; self.parameter_count()];
        for _ in 0..solver.max_iterations {
            let (g, h) = self.gradient_and_hessian(&theta, lambda);
            if g.iter().all(|v| v.abs() < solver.tolerance) {
                return Ok(theta);
            }
            let step = cholesky_solve(h, &g)
                .ok_or_else(|| Error::NonConvergence("toy Hessian is not positive definite".into()))?;
            let f0 = self.training_loss(&theta, lambda);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(th, s)| th - t * s).collect();
                // The slack absorbs rounding once the decrease is below f64 resolution.
                if self.training_loss(&cand, lambda) <= f0 - 1e-4 * t * slope + 1e-14 * f0.abs() || t < 1e-10 {
                    theta = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::NonConvergence(format!(
            "toy problem did not reach gradient tolerance {} in {} Newton steps",
            solver.tolerance, solver.max_iterations
        )))
    }

    /// A seeded mixture-of-Gaussians instance. Each unlabelled pseudo-label is
    /// wrong with probability `wrong_fraction`.
    pub fn random(seed: u64, dim: usize, classes: usize, sizes: (usize, usize, usize), wrong_fraction: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| 1.5 * normal(&mut rng)).collect::<Vec<f64>>())
            .collect();
        let draw = |rng: &mut ChaCha8Rng| {
            let label = rng.random_range(0..classes);
            let x = means[label]
                .iter()
                .map(|m| m + normal(rng))
                .collect();
            ToyExample { x, label }
        };
        let labelled = (0..sizes.0).map(|_| draw(&mut rng)).collect();
        let validation = (0..sizes.2).map(|_| draw(&mut rng)).collect();
        let unlabelled: Vec<ToyExample> = (0..sizes.1)
            .map(|_| {
                let mut e = draw(&mut rng);
                if classes > 1 && rng.random::<f64>() < wrong_fraction {
                    e.label = (e.label + rng.random_range(1..classes)) % classes;
                }
                e
            })
            .collect();
        let n = unlabelled.len();
        ToyProblem {
            dim,
            classes,
            labelled,
            unlabelled,
            validation,
            lambda: vec![0.5; n],
            l2: 1e-2,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `(l_v(theta*(lambda + delta e_i)) - l_v(theta*(lambda))) / delta`.
pub fn brute_force_influence(problem: &ToyProblem, index: usize, delta: f64, solver: &SolverConfig) -> Result<f64> {
    if index >= problem.unlabelled.len() {
        return Err(Error::invalid(format!("unlabelled index {index} out of range")));
    }
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::invalid("perturbation must be finite and non-zero"));
    }
    let base = problem.fit(&problem.lambda, solver)?;
    let mut bumped = problem.lambda.clone();
    bumped[index] += delta;
    let moved = problem.fit(&bumped, solver)?;
    let estimate = (problem.validation_loss(&moved) - problem.validation_loss(&base)) / delta;
    if !estimate.is_finite() {
        return Err(Error::NonFinite { op: "brute_force_influence" });
    }
    Ok(estimate)
}

/// Solves `A x = b` for symmetric positive definite `A`.
fn cholesky_solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| a[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / a[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / a[i][i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_small_system() {
        let x = cholesky_solve(vec![vec![4.0, 2.0], vec![2.0, 3.0]], &[2.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1].abs() < 1e-12);
        assert!(cholesky_solve(vec![vec![-1.0]], &[1.0]).is_none());
    }

    #[test]
    fn fit_reaches_a_stationary_point() {
        let p = ToyProblem::random(3, 3, 3, (30, 10, 20), 0.3);
        let theta = p.fit(&p.lambda, &SolverConfig::default()).unwrap();
        let (g, _) = p.gradient_and_hessian(&theta, &p.lambda);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn copy_of_validation_point_helps_and_mislabelled_copy_hurts() {
        let mut p = ToyProblem::random(5, 3, 3, (20, 2, 30), 0.0);
        let v = p.validation[0].clone();
        p.unlabelled[0] = v.clone();
        p.unlabelled[1] = ToyExample {
            x: v.x.clone(),
            label: (v.label + 1) % 3,
        };
        let s = SolverConfig::default();
        assert!(brute_force_influence(&p, 0, 1e-2, &s).unwrap() < 0.0);
        assert!(brute_force_influence(&p, 1, 1e-2, &s).unwrap() > 0.0);
    }

    #[test]
    fn estimates_stable_as_delta_shrinks() {
        let p = ToyProblem::random(8, 4, 3, (30, 10, 30), 0.3);
        let s = SolverConfig::default();
        for i in 0..p.unlabelled.len() {
            let a = brute_force_influence(&p, i, 1e-2, &s).unwrap();
            let b = brute_force_influence(&p, i, 5e-3, &s).unwrap();
            assert!((a - b).abs() <= 0.1 * a.abs().max(b.abs()) + 1e-9, "{i}: {a} vs {b}");
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let p = ToyProblem::random(1, 2, 2, (10, 2, 5), 0.0);
        let s = SolverConfig {
            tolerance: 1e-30,
            max_iterations: 2,
        };
        assert!(matches!(p.fit(&p.lambda, &s), Err(Error::NonConvergence(_))));
    }
}
