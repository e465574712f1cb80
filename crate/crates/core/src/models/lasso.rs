//! L1-penalized logistic regression.
//!
//! Minimizes `-(1/n) loglik + lambda * |beta|_1` over standardized features
//! with coordinate descent inside an iteratively reweighted least-squares
//! loop, along a decreasing lambda path with warm starts. The penalty is
//! chosen by stratified cross-validation on held-out log-loss.

use serde::{Deserialize, Serialize};

use super::{
    fold_split, log_loss, sigmoid, stratified_folds, Classifier, ExampleSet, ModelError, Standardizer,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSelection {
    /// Largest lambda whose CV loss is within one standard error of the best.
    #[default]
    OneStandardError,
    /// Lambda with the lowest CV loss.
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// Explicit path (sorted descending before use). A single value skips
    /// cross-validation.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambda: usize,
    /// Smallest lambda as a fraction of the smallest all-zero lambda;
    /// defaults to 1e-4 when n > p and 1e-2 otherwise.
    pub lambda_min_ratio: Option<f64>,
    pub cv_folds: usize,
    pub selection: LambdaSelection,
    pub tolerance: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            n_lambda: 50,
            lambda_min_ratio: None,
            cv_folds: 10,
            selection: LambdaSelection::default(),
            tolerance: 1e-7,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoCvPoint {
    pub lambda: f64,
    pub mean_log_loss: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub standardizer: Standardizer,
    pub intercept: f64,
    /// Standardized-scale coefficients.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub cv: Vec<LassoCvPoint>,
}

impl LassoModel {
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        self.standardizer.to_raw(self.intercept, &self.coefficients)
    }

    pub fn n_nonzero(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }
}

impl Classifier for LassoModel {
    fn proba(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.transform(x);
        sigmoid(self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>())
    }
}

const P_CLAMP: f64 = 1e-5;
const MAX_IRLS: usize = 100;
const OBJECTIVE_TOL: f64 = 1e-10;

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Column-major standardized design.
struct Design {
    n: usize,
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Design {
    fn new(standardizer: &Standardizer, set: &ExampleSet) -> Self {
        let rows = standardizer.transform_set(set);
        let cols = (0..set.p()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self {
            n: set.n(),
            cols,
            y: set.labels().iter().map(|&l| l as f64).collect(),
        }
    }

    fn lambda_max(&self) -> f64 {
        let ybar = self.y.iter().sum::<f64>() / self.n as f64;
        self.cols
            .iter()
            .map(|c| (c.iter().zip(&self.y).map(|(x, y)| x * (y - ybar)).sum::<f64>() / self.n as f64).abs())
            .fold(0.0, f64::max)
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (c, &b) in self.cols.iter().zip(beta) {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(c) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    /// Fits one lambda starting from `(b0, beta)`.
    fn fit(&self, lambda: f64, b0: &mut f64, beta: &mut [f64], config: &LassoConfig) {
        let n = self.n as f64;
        for _ in 0..MAX_IRLS {
            let eta = self.eta(*b0, beta);
            let mut w = Vec::with_capacity(self.n);
            let mut r = Vec::with_capacity(self.n);
            for (e, y) in eta.iter().zip(&self.y) {
                let p = sigmoid(*e).clamp(P_CLAMP, 1.0 - P_CLAMP);
                let wi = p * (1.0 - p);
                w.push(wi);
                // Working residual z - eta.
                r.push((y - p) / wi);
            }
            let w_sum: f64 = w.iter().sum();
            let old_b0 = *b0;
            let old_beta = beta.to_vec();

            // Covariance-mode coordinate descent on the weighted quadratic:
            // coordinate 0 is the unpenalized intercept, coordinate j + 1 is
            // feature j. `gram` is X'WX / n, `grad` tracks X'W r / n for the
            // current residual r, so each update costs O(p) instead of O(n).
            let q = beta.len() + 1;
            let col = |k: usize| -> Option<&Vec<f64>> { (k > 0).then(|| &self.cols[k - 1]) };
            let mut gram = vec![0.0; q * q];
            let mut grad = vec![0.0; q];
            for a in 0..q {
                for b in a..q {
                    let g: f64 = match (col(a), col(b)) {
                        (None, None) => w_sum,
                        (None, Some(x)) | (Some(x), None) => x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum(),
                        (Some(x), Some(z)) => x.iter().zip(z).zip(&w).map(|((xi, zi), wi)| xi * zi * wi).sum(),
                    };
                    gram[a * q + b] = g / n;
                    gram[b * q + a] = g / n;
                }
                grad[a] = match col(a) {
                    None => r.iter().zip(&w).map(|(ri, wi)| ri * wi).sum::<f64>(),
                    Some(x) => x.iter().zip(&r).zip(&w).map(|((xi, ri), wi)| xi * ri * wi).sum::<f64>(),
                } / n;
            }
            let mut theta: Vec<f64> = std::iter::once(*b0).chain(beta.iter().copied()).collect();

            let sweep = |theta: &mut [f64], grad: &mut [f64], active_only: bool| -> f64 {
                let mut max_change = 0.0f64;
                for k in 0..q {
                    let vk = gram[k * q + k];
                    if vk <= 0.0 || (active_only && k > 0 && theta[k] == 0.0) {
                        continue;
                    }
                    let z = grad[k] + vk * theta[k];
                    let new = if k == 0 { z / vk } else { soft_threshold(z, lambda) / vk };
                    let d = new - theta[k];
                    if d != 0.0 {
                        theta[k] = new;
                        let row = &gram[k * q..(k + 1) * q];
                        for (g, gk) in grad.iter_mut().zip(row) {
                            *g -= d * gk;
                        }
                        max_change = max_change.max(vk * d * d);
                    }
                }
                max_change
            };

            let mut iters = 0;
            loop {
                let full = sweep(&mut theta, &mut grad, false);
                iters += 1;
                if full < config.tolerance || iters >= config.max_iter {
                    break;
                }
                while iters < config.max_iter {
                    iters += 1;
                    if sweep(&mut theta, &mut grad, true) < config.tolerance {
                        break;
                    }
                }
            }
            *b0 = theta[0];
            beta.copy_from_slice(&theta[1..]);
            let v: Vec<f64> = (1..q).map(|k| gram[k * q + k]).collect();

            // The quadratic step can overshoot on nearly separable data, so
            // it is backtracked until the penalized objective decreases.
            let f_old = self.objective(lambda, old_b0, &old_beta);
            let (new_b0, new_beta) = (*b0, beta.to_vec());
            let mut t = 1.0;
            let mut f_new = self.objective(lambda, new_b0, &new_beta);
            while f_new > f_old && t > 1e-6 {
                t /= 2.0;
                *b0 = old_b0 + t * (new_b0 - old_b0);
                for j in 0..beta.len() {
                    beta[j] = old_beta[j] + t * (new_beta[j] - old_beta[j]);
                }
                f_new = self.objective(lambda, *b0, beta);
            }
            if f_new > f_old {
                *b0 = old_b0;
                beta.copy_from_slice(&old_beta);
                break;
            }
            // Same weighted-change criterion as the inner loop.
            let moved = beta
                .iter()
                .zip(&old_beta)
                .zip(&v)
                .map(|((a, b), vj)| vj * (a - b).powi(2))
                .fold(w_sum / n * (*b0 - old_b0).powi(2), f64::max);
            if moved < config.tolerance || f_old - f_new <= OBJECTIVE_TOL * f_old.abs().max(1e-12) {
                break;
            }
        }
    }

    /// Mean negative log-likelihood plus the L1 penalty.
    fn objective(&self, lambda: f64, b0: f64, beta: &[f64]) -> f64 {
        let eta = self.eta(b0, beta);
        let nll: f64 = eta
            .iter()
            .zip(&self.y)
            .map(|(e, y)| e.max(0.0) + (-e.abs()).exp().ln_1p() - y * e)
            .sum();
        nll / self.n as f64 + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn path(&self, lambdas: &[f64], config: &LassoConfig) -> Vec<(f64, Vec<f64>)> {
        let ybar = (self.y.iter().sum::<f64>() / self.n as f64).clamp(P_CLAMP, 1.0 - P_CLAMP);
        let mut b0 = (ybar / (1.0 - ybar)).ln();
        let mut beta = vec![0.0; self.cols.len()];
        lambdas
            .iter()
            .map(|&l| {
                self.fit(l, &mut b0, &mut beta, config);
                (b0, beta.clone())
            })
            .collect()
    }
}

fn lambda_path(design: &Design, p: usize, config: &LassoConfig) -> Result<Vec<f64>, ModelError> {
    if let Some(grid) = &config.lambda_grid {
        if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(ModelError::InvalidConfig("lambda_grid must be non-empty and non-negative".into()));
        }
        let mut g = grid.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        return Ok(g);
    }
    if config.n_lambda == 0 {
        return Err(ModelError::InvalidConfig("n_lambda must be positive".into()));
    }
    let max = design.lambda_max().max(f64::MIN_POSITIVE);
    let ratio = config
        .lambda_min_ratio
        .unwrap_or(if design.n > p { 1e-4 } else { 1e-2 });
    if config.n_lambda == 1 {
        return Ok(vec![max]);
    }
    let step = ratio.ln() / (config.n_lambda - 1) as f64;
    Ok((0..config.n_lambda).map(|k| max * (step * k as f64).exp()).collect())
}

pub fn train(set: &ExampleSet, config: &LassoConfig) -> Result<LassoModel, ModelError> {
    set.require_both_classes()?;
    let standardizer = Standardizer::fit(set);
    let design = Design::new(&standardizer, set);
    let lambdas = lambda_path(&design, set.p(), config)?;

    let k = config.cv_folds;
    let can_cv = lambdas.len() > 1 && k >= 2 && set.class_counts().iter().all(|&c| c >= k);
    let mut cv = Vec::new();
    let chosen = if can_cv {
        let folds = stratified_folds(set.labels(), k, config.seed);
        let mut losses = vec![Vec::with_capacity(k); lambdas.len()];
        for f in 0..k {
            let (train_idx, held_idx) = fold_split(&folds, f);
            let train_set = set.subset(&train_idx);
            let held = set.subset(&held_idx);
            let st = Standardizer::fit(&train_set);
            let path = Design::new(&st, &train_set).path(&lambdas, config);
            let held_rows = st.transform_set(&held);
            for (li, (b0, beta)) in path.iter().enumerate() {
                let probs: Vec<f64> = held_rows
                    .iter()
                    .map(|z| sigmoid(b0 + z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()))
                    .collect();
                losses[li].push(log_loss(&probs, held.labels()));
            }
        }
        for (li, l) in losses.iter().enumerate() {
            let mean = l.iter().sum::<f64>() / k as f64;
            let var = l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            cv.push(LassoCvPoint {
                lambda: lambdas[li],
                mean_log_loss: mean,
                se: (var / k as f64).sqrt(),
            });
        }
        let best = (0..cv.len())
            .min_by(|&a, &b| cv[a].mean_log_loss.total_cmp(&cv[b].mean_log_loss))
            .expect("non-empty path");
        match config.selection {
            LambdaSelection::Min => best,
            LambdaSelection::OneStandardError => {
                let limit = cv[best].mean_log_loss + cv[best].se;
                // The path is descending, so the first qualifying index is the largest lambda.
                (0..=best).find(|&i| cv[i].mean_log_loss <= limit).unwrap_or(best)
            }
        }
    } else {
        lambdas.len() - 1
    };

    let path = design.path(&lambdas[..=chosen], config);
    let (intercept, coefficients) = path.into_iter().last().expect("non-empty path");
    Ok(LassoModel {
        standardizer,
        intercept,
        coefficients,
        lambda: lambdas[chosen],
        cv,
    })
}
