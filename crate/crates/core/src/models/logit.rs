//! Maximum-likelihood logistic regression.
//!
//! Newton-Raphson on the mean negative log-likelihood in standardized feature
//! space, with Levenberg damping when the Hessian is not positive definite
//! and a backtracking line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, Classifier, ExampleSet, ModelError, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogitConfig {
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub tolerance: f64,
}

impl Default for LogitConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub mean_log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    pub standardizer: Standardizer,
    pub intercept: f64,
    /// Slopes in standardized units.
    pub coefficients: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl LogitModel {
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        self.standardizer.to_raw(self.intercept, &self.coefficients)
    }

    fn linear(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl Classifier for LogitModel {
    fn proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean negative log-likelihood of `theta = [intercept, slopes...]`.
fn objective(design: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let eta = design * theta;
    let n = y.len() as f64;
    eta.iter().zip(y.iter()).map(|(&e, &t)| softplus(e) - t * e).sum::<f64>() / n
}

pub fn train(set: &ExampleSet, config: &LogitConfig) -> Result<LogitModel, ModelError> {
    set.require_both_classes()?;
    let standardizer = Standardizer::fit(set);
    let active: Vec<usize> = (0..set.p()).filter(|&j| standardizer.active[j]).collect();
    let n = set.n();
    let k = active.len() + 1;

    let mut design = DMatrix::<f64>::zeros(n, k);
    for (i, row) in set.rows().enumerate() {
        let z = standardizer.transform(row);
        design[(i, 0)] = 1.0;
        for (c, &j) in active.iter().enumerate() {
            design[(i, c + 1)] = z[j];
        }
    }
    let y = DVector::from_iterator(n, set.labels().iter().map(|&l| l as f64));

    let mut theta = DVector::<f64>::zeros(k);
    theta[0] = super::log_odds(set.base_rate());
    let mut f = objective(&design, &y, &theta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let nf = n as f64;

    while iterations < config.max_iter {
        let eta = &design * &theta;
        let p = eta.map(sigmoid);
        let grad = design.transpose() * (&p - &y) / nf;
        grad_norm = grad.amax();
        if grad_norm < config.tolerance {
            break;
        }
        iterations += 1;

        let w = p.map(|pi| pi * (1.0 - pi));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hessian = design.transpose() * weighted / nf;
        let direction = damped_newton_step(&hessian, &grad);

        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let candidate = &theta + &direction * step;
            let fc = objective(&design, &y, &candidate);
            if fc <= f + 1e-4 * step * slope {
                theta = candidate;
                f = fc;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let converged = grad_norm < config.tolerance;
    if !converged {
        log::warn!(
            "logit: no convergence after {iterations} iterations (gradient max-norm {grad_norm:.3e})"
        );
    }
    let mut coefficients = vec![0.0; set.p()];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j] = theta[c + 1];
    }
    Ok(LogitModel {
        standardizer,
        intercept: theta[0],
        coefficients,
        diagnostics: FitDiagnostics {
            iterations,
            converged,
            gradient_norm: grad_norm,
            mean_log_likelihood: -f,
        },
    })
}

/// Solves `(H + mu I) d = -g`, raising `mu` until the Cholesky factorization succeeds.
fn damped_newton_step(hessian: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let k = grad.len();
    let scale = hessian.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut mu = 0.0;
    loop {
        let mut h = hessian.clone();
        for i in 0..k {
            h[(i, i)] += mu;
        }
        if let Some(chol) = h.cholesky() {
            let d = chol.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        mu = if mu == 0.0 { 1e-12 * scale } else { mu * 10.0 };
        if mu > 1e12 * scale {
            return -grad.clone();
        }
    }
}
