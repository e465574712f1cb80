//! Gradient boosting on the logistic loss.
//!
//! Starting from the base-rate log-odds, each round fits a depth-limited
//! regression tree to the current residuals `y - p` and adds it, scaled by the
//! learning rate, to the raw score. Leaves hold the mean residual, so every
//! round is a plain gradient step on the leaf regions.

use serde::{Deserialize, Serialize};

use super::tree::{self, Columns, Criterion, GrowParams, Tree};
use super::{log_odds, sigmoid, Classifier, ExampleSet, ModelError};
use crate::rng::unit_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingModel {
    pub init_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostingModel {
    /// Raw score after the first `rounds` trees.
    pub fn score(&self, x: &[f64], rounds: usize) -> f64 {
        self.init_score
            + self.learning_rate * self.trees.iter().take(rounds).map(|t| t.predict(x)).sum::<f64>()
    }
}

impl Classifier for BoostingModel {
    fn proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x, self.trees.len()))
    }
}

/// Negative gradient of the logistic loss with respect to the raw score.
pub fn logistic_residuals(labels: &[u8], scores: &[f64]) -> Vec<f64> {
    labels.iter().zip(scores).map(|(&y, &f)| y as f64 - sigmoid(f)).collect()
}

pub fn train(set: &ExampleSet, config: &BoostingConfig) -> Result<BoostingModel, ModelError> {
    set.require_both_classes()?;
    if !(config.learning_rate > 0.0) {
        return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
    }
    let init_score = log_odds(set.base_rate());
    let columns = Columns::from_rows(set.rows(), set.p());
    let rows: Vec<usize> = (0..set.n()).collect();
    let params = GrowParams {
        min_leaf: config.min_leaf.max(1),
        max_depth: Some(config.max_depth),
        mtry: None,
    };
    let mut rng = unit_rng(config.seed, &[]);
    let mut scores = vec![init_score; set.n()];
    let mut trees = Vec::with_capacity(config.n_rounds);
    for _ in 0..config.n_rounds {
        let residuals = logistic_residuals(set.labels(), &scores);
        let t = tree::grow(&columns, &residuals, &rows, Criterion::SquaredError, &params, &mut rng);
        for (i, row) in set.rows().enumerate() {
            scores[i] += config.learning_rate * t.predict(row);
        }
        trees.push(t);
    }
    Ok(BoostingModel {
        init_score,
        learning_rate: config.learning_rate,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::log_loss;
    use rand::Rng;

    fn data(seed: u64) -> ExampleSet {
        let mut rng = unit_rng(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let labels = rows
            .iter()
            .map(|r| u8::from(rng.random::<f64>() < if r[0] > 0.6 { 0.85 } else { 0.2 }))
            .collect();
        ExampleSet::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn first_residuals_are_label_minus_base_rate() {
        let set = data(1);
        let p0 = set.base_rate();
        let r = logistic_residuals(set.labels(), &vec![log_odds(p0); set.n()]);
        for (ri, &y) in r.iter().zip(set.labels()) {
            assert!((ri - (y as f64 - p0)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let set = data(2);
        let m = train(
            &set,
            &BoostingConfig {
                n_rounds: 40,
                ..BoostingConfig::default()
            },
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for rounds in 0..=m.trees.len() {
            let p: Vec<f64> = set.rows().map(|r| sigmoid(m.score(r, rounds))).collect();
            let loss = log_loss(&p, set.labels());
            assert!(loss <= prev + 1e-12, "round {rounds}: {loss} > {prev}");
            prev = loss;
        }
        let p0: Vec<f64> = vec![set.base_rate(); set.n()];
        assert!(prev < log_loss(&p0, set.labels()) - 0.05);
    }

    #[test]
    fn zero_rounds_predicts_base_rate() {
        let set = data(3);
        let m = train(
            &set,
            &BoostingConfig {
                n_rounds: 0,
                ..BoostingConfig::default()
            },
        )
        .unwrap();
        assert!((m.proba(&[0.1, 0.1]) - set.base_rate()).abs() < 1e-12);
    }
}
