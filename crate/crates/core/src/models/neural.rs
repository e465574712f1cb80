//! Single-hidden-layer feed-forward network with sigmoid units, trained by
//! mini-batch gradient descent on the log-loss. With zero hidden units the
//! inputs connect straight to the output and the model is a logistic
//! regression.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Classifier, ExampleSet, ModelError, Standardizer};
use crate::rng::unit_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralNetConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Initial weights are uniform on `[-init_range, init_range]`.
    pub init_range: f64,
    pub seed: u64,
}

impl Default for NeuralNetConfig {
    fn default() -> Self {
        Self {
            hidden_units: 8,
            epochs: 500,
            learning_rate: 0.01,
            batch_size: 32,
            init_range: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNetModel {
    pub standardizer: Standardizer,
    pub hidden_units: usize,
    /// `hidden_units x p`.
    pub input_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    /// Length `hidden_units`, or `p` when there is no hidden layer.
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl NeuralNetModel {
    fn hidden(&self, z: &[f64]) -> Vec<f64> {
        self.input_weights
            .iter()
            .zip(&self.hidden_bias)
            .map(|(w, b)| sigmoid(b + dot(w, z)))
            .collect()
    }

    /// Output pre-activation for a standardized row.
    fn logit_std(&self, z: &[f64]) -> f64 {
        if self.hidden_units == 0 {
            self.output_bias + dot(&self.output_weights, z)
        } else {
            self.output_bias + dot(&self.output_weights, &self.hidden(z))
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.hidden_units * self.standardizer.mean.len()
            + self.hidden_units
            + self.output_weights.len()
            + 1
    }

    /// Weights flattened as input weights (row-major), hidden biases, output
    /// weights, output bias.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for w in &self.input_weights {
            out.extend_from_slice(w);
        }
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.output_weights);
        out.push(self.output_bias);
        out
    }

    pub fn set_flat_parameters(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.n_parameters());
        let mut it = theta.iter().copied();
        for w in &mut self.input_weights {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.hidden_bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        self.output_weights.iter_mut().for_each(|v| *v = it.next().unwrap());
        self.output_bias = it.next().unwrap();
    }

    /// Mean log-loss over standardized `rows` and its gradient, laid out as in
    /// [`Self::flat_parameters`].
    pub fn loss_and_gradient(&self, rows: &[Vec<f64>], labels: &[u8]) -> (f64, Vec<f64>) {
        let p = self.standardizer.mean.len();
        let h = self.hidden_units;
        let mut grad = vec![0.0; self.n_parameters()];
        let (w1_end, b1_end) = (h * p, h * p + h);
        let mut loss = 0.0;
        for (z, &y) in rows.iter().zip(labels) {
            let y = y as f64;
            if h == 0 {
                let out = self.output_bias + dot(&self.output_weights, z);
                loss += softplus(out) - y * out;
                let delta = sigmoid(out) - y;
                for (g, zj) in grad[b1_end..b1_end + p].iter_mut().zip(z) {
                    *g += delta * zj;
                }
                grad[b1_end + p] += delta;
                continue;
            }
            let a = self.hidden(z);
            let out = self.output_bias + dot(&self.output_weights, &a);
            loss += softplus(out) - y * out;
            let delta = sigmoid(out) - y;
            for k in 0..h {
                grad[b1_end + k] += delta * a[k];
                let dk = delta * self.output_weights[k] * a[k] * (1.0 - a[k]);
                for (g, zj) in grad[k * p..(k + 1) * p].iter_mut().zip(z) {
                    *g += dk * zj;
                }
                grad[w1_end + k] += dk;
            }
            grad[b1_end + h] += delta;
        }
        let n = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    /// `(intercept, slopes)` in raw feature units; only meaningful without a
    /// hidden layer.
    pub fn raw_coefficients(&self) -> Option<(f64, Vec<f64>)> {
        (self.hidden_units == 0).then(|| self.standardizer.to_raw(self.output_bias, &self.output_weights))
    }
}

impl Classifier for NeuralNetModel {
    fn proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit_std(&self.standardizer.transform(x)))
    }
}

pub fn train(set: &ExampleSet, config: &NeuralNetConfig) -> Result<NeuralNetModel, ModelError> {
    set.require_both_classes()?;
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(ModelError::InvalidConfig(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let standardizer = Standardizer::fit(set);
    let rows = standardizer.transform_set(set);
    let p = set.p();
    let h = config.hidden_units;
    let mut rng = unit_rng(config.seed, &[]);
    let r = config.init_range;
    let mut draw = || if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
    let input_weights: Vec<Vec<f64>> = (0..h).map(|_| (0..p).map(|_| draw()).collect()).collect();
    let hidden_bias = (0..h).map(|_| draw()).collect();
    let output_weights = (0..if h == 0 { p } else { h }).map(|_| draw()).collect();
    let output_bias = draw();
    let mut model = NeuralNetModel {
        standardizer,
        hidden_units: h,
        input_weights,
        hidden_bias,
        output_weights,
        output_bias,
    };

    let mut order: Vec<usize> = (0..set.n()).collect();
    let mut theta = model.flat_parameters();
    let mut shuffle_rng = unit_rng(config.seed, &[1]);
    let mut batch_rows = Vec::with_capacity(config.batch_size);
    let mut batch_labels = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            batch_rows.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_rows.push(rows[i].clone());
                batch_labels.push(set.label(i));
            }
            let (_, grad) = model.loss_and_gradient(&batch_rows, &batch_labels);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= config.learning_rate * g;
            }
            model.set_flat_parameters(&theta);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::logit;

    fn noisy_logistic(n: usize, seed: u64) -> ExampleSet {
        let mut rng = unit_rng(seed, &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let row = vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..5.0)];
            let eta = 0.5 + 1.2 * row[0] - 0.4 * row[1];
            labels.push(u8::from(rng.random::<f64>() < sigmoid(eta)));
            rows.push(row);
        }
        ExampleSet::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let set = noisy_logistic(5, 3);
        let mut model = train(
            &set,
            &NeuralNetConfig {
                hidden_units: 3,
                epochs: 3,
                batch_size: 2,
                ..NeuralNetConfig::default()
            },
        )
        .unwrap();
        let rows = model.standardizer.transform_set(&set);
        let (_, grad) = model.loss_and_gradient(&rows, set.labels());
        let theta = model.flat_parameters();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] += h;
            model.set_flat_parameters(&t);
            let up = model.loss_and_gradient(&rows, set.labels()).0;
            t[k] -= 2.0 * h;
            model.set_flat_parameters(&t);
            let down = model.loss_and_gradient(&rows, set.labels()).0;
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[k].abs()).max(1e-6);
            assert!((fd - grad[k]).abs() / scale < 1e-4, "param {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn no_hidden_layer_is_logistic_regression() {
        let set = noisy_logistic(400, 5);
        let nn = train(
            &set,
            &NeuralNetConfig {
                hidden_units: 0,
                epochs: 5000,
                learning_rate: 1.0,
                batch_size: set.n(),
                ..NeuralNetConfig::default()
            },
        )
        .unwrap();
        let lr = logit::train(&set, &Default::default()).unwrap();
        let (b0, b) = nn.raw_coefficients().unwrap();
        let (c0, c) = lr.raw_coefficients();
        assert!((b0 - c0).abs() < 1e-3, "{b0} vs {c0}");
        for (x, y) in b.iter().zip(&c) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let mut rng = unit_rng(11, &[]);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + r[1] > 0.0)).collect();
        let set = ExampleSet::from_rows(rows, labels).unwrap();
        let m = train(&set, &NeuralNetConfig::default()).unwrap();
        let correct = set
            .rows()
            .zip(set.labels())
            .filter(|(r, &y)| u8::from(m.proba(r) >= 0.5) == y)
            .count();
        assert!(correct as f64 / 200.0 >= 0.95, "{correct}/200");
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let set = noisy_logistic(60, 8);
        let config = NeuralNetConfig {
            epochs: 20,
            seed: 4,
            ..NeuralNetConfig::default()
        };
        assert_eq!(train(&set, &config).unwrap(), train(&set, &config).unwrap());
    }
}
