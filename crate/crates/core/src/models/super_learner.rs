//! Cross-validated stacking.
//!
//! Each base learner produces out-of-fold probabilities; the ensemble weights
//! minimize the squared error of the weighted out-of-fold prediction over the
//! probability simplex. The minimization is solved exactly: every support set
//! is tried with the sum-to-one constraint active, and the best feasible
//! (non-negative) solution wins. Identical prediction columns are merged
//! first and share their weight equally.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    fold_split, stratified_folds, BoostingConfig, Classifier, ExampleSet, ForestConfig, LassoConfig,
    ModelError, NeuralNetConfig, Parameters, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperLearnerConfig {
    pub folds: usize,
    pub base_learners: Vec<TrainConfig>,
    pub seed: u64,
}

impl Default for SuperLearnerConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

impl SuperLearnerConfig {
    /// Forest, lasso-logit, boosting and network with default settings.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            folds: 10,
            base_learners: vec![
                TrainConfig::RandomForest(ForestConfig {
                    seed,
                    ..ForestConfig::default()
                }),
                TrainConfig::LassoLogit(LassoConfig {
                    seed,
                    ..LassoConfig::default()
                }),
                TrainConfig::GradientBoosting(BoostingConfig {
                    seed,
                    ..BoostingConfig::default()
                }),
                TrainConfig::NeuralNet(NeuralNetConfig {
                    seed,
                    ..NeuralNetConfig::default()
                }),
            ],
            seed,
        }
    }

    /// Sets the fold seed and every base learner's seed. All learners share
    /// it, so a learner listed twice yields identical predictions.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        for c in &mut self.base_learners {
            *c = c.with_seed(seed);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedLearner {
    pub config: TrainConfig,
    pub weight: f64,
    /// Mean squared error of the out-of-fold probabilities.
    pub stacking_loss: Option<f64>,
    /// Refit on all data; absent when the weight is zero.
    pub model: Option<Box<Parameters>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerModel {
    pub learners: Vec<StackedLearner>,
    /// Mean squared error of the weighted out-of-fold prediction.
    pub stacking_loss: f64,
}

impl SuperLearnerModel {
    pub fn weights(&self) -> Vec<f64> {
        self.learners.iter().map(|l| l.weight).collect()
    }
}

impl Classifier for SuperLearnerModel {
    fn proba(&self, x: &[f64]) -> f64 {
        self.learners
            .iter()
            .filter_map(|l| l.model.as_ref().map(|m| l.weight * m.classifier().proba(x)))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

fn mse(pred: impl Iterator<Item = f64>, y: &[f64]) -> f64 {
    pred.zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Minimizes `|y - Z w|^2` over `w >= 0, sum(w) = 1`, where `columns` are
/// the columns of `Z`. Among equally good solutions the one found first
/// (smallest support in subset-enumeration order) wins.
pub fn simplex_least_squares(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = columns.len();
    assert!(k > 0 && k < 24, "simplex solve supports 1..24 columns");
    let n = y.len();
    let gram = DMatrix::from_fn(k, k, |a, b| columns[a].iter().zip(&columns[b]).map(|(u, v)| u * v).sum());
    let zy = DVector::from_fn(k, |a, _| columns[a].iter().zip(y).map(|(u, v)| u * v).sum());

    let loss = |w: &[f64]| -> f64 { mse((0..n).map(|i| (0..k).map(|a| w[a] * columns[a][i]).sum()), y) };

    let mut masks: Vec<u32> = (1..(1u32 << k)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in masks {
        let support: Vec<usize> = (0..k).filter(|a| mask & (1 << a) != 0).collect();
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (r, &a) in support.iter().enumerate() {
            for (c, &b) in support.iter().enumerate() {
                kkt[(r, c)] = gram[(a, b)];
            }
            kkt[(r, s)] = 1.0;
            kkt[(s, r)] = 1.0;
            rhs[r] = zy[a];
        }
        rhs[s] = 1.0;
        let Ok(sol) = kkt.svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        let mut w = vec![0.0; k];
        let mut feasible = true;
        for (r, &a) in support.iter().enumerate() {
            if !(sol[r] >= -1e-12) {
                feasible = false;
                break;
            }
            w[a] = sol[r].max(0.0);
        }
        let total: f64 = w.iter().sum();
        if !feasible || !(total > 0.0) {
            continue;
        }
        w.iter_mut().for_each(|v| *v /= total);
        let l = loss(&w);
        let improves = match &best {
            None => true,
            Some((b, _)) => l < b - 1e-12 * b.abs().max(1e-300),
        };
        if improves {
            best = Some((l, w));
        }
    }
    best.map(|(_, w)| w).unwrap_or_else(|| {
        // Every vertex is feasible, so this is unreachable in exact arithmetic.
        let mut w = vec![0.0; k];
        w[0] = 1.0;
        w
    })
}

/// Simplex weights for possibly repeated columns: exact duplicates are
/// solved as one column and split its weight uniformly.
pub fn stacking_weights(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (a, col) in columns.iter().enumerate() {
        match groups.iter_mut().find(|g| columns[g[0]] == *col) {
            Some(g) => g.push(a),
            None => groups.push(vec![a]),
        }
    }
    let unique: Vec<Vec<f64>> = groups.iter().map(|g| columns[g[0]].clone()).collect();
    let w = simplex_least_squares(&unique, y);
    let mut out = vec![0.0; columns.len()];
    for (g, wg) in groups.iter().zip(w) {
        for &a in g {
            out[a] = wg / g.len() as f64;
        }
    }
    out
}

pub fn train(set: &ExampleSet, config: &SuperLearnerConfig) -> Result<SuperLearnerModel, ModelError> {
    set.require_both_classes()?;
    let v = config.folds;
    if config.base_learners.is_empty() {
        return Err(ModelError::InvalidConfig("no base learners".into()));
    }
    if config
        .base_learners
        .iter()
        .any(|c| matches!(c, TrainConfig::SuperLearner(_)))
    {
        return Err(ModelError::InvalidConfig("super learners cannot be nested".into()));
    }
    if v < 2 || set.class_counts().iter().any(|&c| c < v) {
        return Err(ModelError::InvalidConfig(format!(
            "{v}-fold stacking needs at least {v} examples per class"
        )));
    }
    let folds = stratified_folds(set.labels(), v, config.seed);
    let splits: Vec<_> = (0..v)
        .map(|f| {
            let (tr, held) = fold_split(&folds, f);
            (set.subset(&tr), held)
        })
        .collect();
    let y: Vec<f64> = set.labels().iter().map(|&l| l as f64).collect();

    let mut oof: Vec<Option<Vec<f64>>> = Vec::with_capacity(config.base_learners.len());
    let mut errors: Vec<Option<String>> = Vec::new();
    for learner in &config.base_learners {
        let mut preds = vec![0.0; set.n()];
        let mut failure = None;
        for (train_set, held) in &splits {
            match super::train(train_set, learner) {
                Ok(model) => {
                    for &i in held {
                        preds[i] = model.parameters.classifier().proba(set.row(i)).clamp(0.0, 1.0);
                    }
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(e) = &failure {
            log::warn!("base learner {} failed: {e}", learner.family().as_str());
        }
        oof.push(failure.is_none().then_some(preds));
        errors.push(failure);
    }

    let ok: Vec<usize> = (0..oof.len()).filter(|&k| oof[k].is_some()).collect();
    if ok.is_empty() {
        let msg = errors.iter().flatten().cloned().collect::<Vec<_>>().join("; ");
        return Err(ModelError::AllBaseLearnersFailed(msg));
    }
    let columns: Vec<Vec<f64>> = ok.iter().map(|&k| oof[k].clone().expect("ok learner")).collect();
    let w_ok = stacking_weights(&columns, &y);
    let mut weights = vec![0.0; oof.len()];
    for (&k, w) in ok.iter().zip(&w_ok) {
        weights[k] = *w;
    }
    let stacking_loss = mse(
        (0..set.n()).map(|i| columns.iter().zip(&w_ok).map(|(c, w)| w * c[i]).sum()),
        &y,
    );

    let mut learners = Vec::with_capacity(oof.len());
    for (k, learner) in config.base_learners.iter().enumerate() {
        let model = if weights[k] > 0.0 {
            Some(Box::new(super::train(set, learner)?.parameters))
        } else {
            None
        };
        learners.push(StackedLearner {
            config: learner.clone(),
            weight: weights[k],
            stacking_loss: oof[k].as_ref().map(|p| mse(p.iter().copied(), &y)),
            model,
            error: errors[k].clone(),
        });
    }
    Ok(SuperLearnerModel { learners, stacking_loss })
}
