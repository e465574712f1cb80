//! Cartel classifiers.
//!
//! Every family trains from an [`ExampleSet`] into a [`ModelArtifact`], the
//! versioned, serializable form used for prediction and persistence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, TenderId};
use crate::screens::{self, FeatureMode, ScreenConfig, ScreenError, ScreenVector};

pub mod boosting;
pub mod cart;
pub mod forest;
pub mod lasso;
pub mod logit;
pub mod neural;
mod standardize;
pub mod super_learner;
pub mod tree;

pub use boosting::{BoostingConfig, BoostingModel};
pub use cart::{CartConfig, CartModel};
pub use forest::{ForestConfig, ForestModel};
pub use lasso::{LassoConfig, LassoModel};
pub use logit::{LogitConfig, LogitModel};
pub use neural::{NeuralNetConfig, NeuralNetModel};
pub use standardize::Standardizer;
pub use super_learner::{SuperLearnerConfig, SuperLearnerModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Probabilities are clipped to `[EPS, 1 - EPS]` wherever a log-loss is taken.
pub const LOG_LOSS_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("SingleClassData: training data needs examples of both classes (got {negatives} competition, {positives} cartel)")]
    SingleClassData { negatives: usize, positives: usize },
    #[error("SchemaMismatch: model expects {expected} features, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("SchemaMismatch: model was trained on a custom feature matrix, not screens")]
    NoFeatureMode,
    #[error("InvalidThreshold: {0} is not in (0, 1)")]
    InvalidThreshold(f64),
    #[error("InvalidLabel: {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("BaseLearnerFailure: every base learner failed ({0})")]
    AllBaseLearnersFailed(String),
    #[error("EmptyInput: no training examples")]
    EmptyInput,
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error("model serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// One labeled tender in feature space; label 1 is cartel, 0 competition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tender_id: TenderId,
    pub features: Vec<f64>,
    pub label: u8,
}

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    feature_names: Vec<String>,
    feature_mode: Option<FeatureMode>,
    tender_ids: Vec<TenderId>,
    x: Vec<f64>,
    labels: Vec<u8>,
}

impl ExampleSet {
    pub fn new(
        feature_mode: Option<FeatureMode>,
        feature_names: Vec<String>,
        examples: Vec<LabeledExample>,
    ) -> Result<Self, ModelError> {
        let p = feature_names.len();
        let mut set = Self {
            feature_names,
            feature_mode,
            tender_ids: Vec::with_capacity(examples.len()),
            x: Vec::with_capacity(examples.len() * p),
            labels: Vec::with_capacity(examples.len()),
        };
        for ex in examples {
            if ex.features.len() != p {
                return Err(ModelError::SchemaMismatch {
                    expected: p,
                    got: ex.features.len(),
                });
            }
            if ex.label > 1 {
                return Err(ModelError::InvalidLabel(ex.label));
            }
            set.tender_ids.push(ex.tender_id);
            set.x.extend_from_slice(&ex.features);
            set.labels.push(ex.label);
        }
        Ok(set)
    }

    /// A feature matrix not derived from screens (tests, external data).
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, ModelError> {
        let p = rows.first().map_or(0, Vec::len);
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let examples = rows
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (features, label))| LabeledExample {
                tender_id: TenderId(format!("row{i}")),
                features,
                label,
            })
            .collect();
        Self::new(None, names, examples)
    }

    /// Builds examples from the labeled tenders of a wrangled dataset.
    /// Tenders whose screens stay undefined (drop policy) are skipped; their
    /// count is returned alongside the set.
    pub fn from_dataset(
        dataset: &Dataset,
        mode: FeatureMode,
        config: &ScreenConfig,
    ) -> Result<(Self, usize), ModelError> {
        let mut examples = Vec::new();
        let mut skipped = 0;
        for tender in dataset.labeled() {
            let s = screens::compute_screens(tender, config)?;
            if !s.is_complete() {
                skipped += 1;
                continue;
            }
            examples.push(LabeledExample {
                tender_id: tender.tender_id.clone(),
                features: mode.features(&s)?,
                label: tender.label.as_binary().expect("labeled tender"),
            });
        }
        Ok((Self::new(Some(mode), mode.names(), examples)?, skipped))
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n()).map(|i| self.row(i))
    }

    pub fn set_value(&mut self, i: usize, j: usize, value: f64) {
        let p = self.p();
        self.x[i * p + j] = value;
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn tender_ids(&self) -> &[TenderId] {
        &self.tender_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_mode(&self) -> Option<FeatureMode> {
        self.feature_mode
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// `[competition, cartel]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        [self.n() - pos, pos]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.p());
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Self {
            feature_names: self.feature_names.clone(),
            feature_mode: self.feature_mode,
            tender_ids: indices.iter().map(|&i| self.tender_ids[i].clone()).collect(),
            x,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub(crate) fn require_both_classes(&self) -> Result<(), ModelError> {
        let [negatives, positives] = self.class_counts();
        if negatives == 0 || positives == 0 {
            return Err(ModelError::SingleClassData {
                negatives,
                positives,
            });
        }
        Ok(())
    }

    pub(crate) fn base_rate(&self) -> f64 {
        self.class_counts()[1] as f64 / self.n() as f64
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Mean Bernoulli log-loss with clipped probabilities.
pub fn log_loss(probabilities: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

/// Anything that maps one feature row to a class-1 probability.
pub trait Classifier {
    fn proba(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logit,
    LassoLogit,
    Cart,
    RandomForest,
    GradientBoosting,
    NeuralNet,
    SuperLearner,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Logit,
        Family::LassoLogit,
        Family::Cart,
        Family::RandomForest,
        Family::GradientBoosting,
        Family::NeuralNet,
        Family::SuperLearner,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Logit => "logit",
            Self::LassoLogit => "lasso_logit",
            Self::Cart => "cart",
            Self::RandomForest => "random_forest",
            Self::GradientBoosting => "gradient_boosting",
            Self::NeuralNet => "neural_net",
            Self::SuperLearner => "super_learner",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }

    /// The category manager's tree reads the raw screens; every centralized
    /// learner reads squares and interactions as well.
    pub fn default_feature_mode(&self) -> FeatureMode {
        match self {
            Self::Cart => FeatureMode::RawScreens,
            _ => FeatureMode::Expanded,
        }
    }

    pub fn default_config(&self, seed: u64) -> TrainConfig {
        match self {
            Self::Logit => TrainConfig::Logit(LogitConfig::default()),
            Self::LassoLogit => TrainConfig::LassoLogit(LassoConfig {
                seed,
                ..LassoConfig::default()
            }),
            Self::Cart => TrainConfig::Cart(CartConfig {
                seed,
                ..CartConfig::default()
            }),
            Self::RandomForest => TrainConfig::RandomForest(ForestConfig {
                seed,
                ..ForestConfig::default()
            }),
            Self::GradientBoosting => TrainConfig::GradientBoosting(BoostingConfig {
                seed,
                ..BoostingConfig::default()
            }),
            Self::NeuralNet => TrainConfig::NeuralNet(NeuralNetConfig {
                seed,
                ..NeuralNetConfig::default()
            }),
            Self::SuperLearner => TrainConfig::SuperLearner(SuperLearnerConfig::with_seed(seed)),
        }
    }
}

/// Family-tagged hyperparameters, including the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainConfig {
    Logit(LogitConfig),
    LassoLogit(LassoConfig),
    Cart(CartConfig),
    RandomForest(ForestConfig),
    GradientBoosting(BoostingConfig),
    NeuralNet(NeuralNetConfig),
    SuperLearner(SuperLearnerConfig),
}

impl TrainConfig {
    pub fn family(&self) -> Family {
        match self {
            Self::Logit(_) => Family::Logit,
            Self::LassoLogit(_) => Family::LassoLogit,
            Self::Cart(_) => Family::Cart,
            Self::RandomForest(_) => Family::RandomForest,
            Self::GradientBoosting(_) => Family::GradientBoosting,
            Self::NeuralNet(_) => Family::NeuralNet,
            Self::SuperLearner(_) => Family::SuperLearner,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Logit(_) => 0,
            Self::LassoLogit(c) => c.seed,
            Self::Cart(c) => c.seed,
            Self::RandomForest(c) => c.seed,
            Self::GradientBoosting(c) => c.seed,
            Self::NeuralNet(c) => c.seed,
            Self::SuperLearner(c) => c.seed,
        }
    }

    /// Same hyperparameters with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::Logit(_) => {}
            Self::LassoLogit(c) => c.seed = seed,
            Self::Cart(c) => c.seed = seed,
            Self::RandomForest(c) => c.seed = seed,
            Self::GradientBoosting(c) => c.seed = seed,
            Self::NeuralNet(c) => c.seed = seed,
            Self::SuperLearner(c) => c.reseed(seed),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameters {
    Logit(LogitModel),
    LassoLogit(LassoModel),
    Cart(CartModel),
    RandomForest(ForestModel),
    GradientBoosting(BoostingModel),
    NeuralNet(NeuralNetModel),
    SuperLearner(SuperLearnerModel),
}

impl Parameters {
    fn classifier(&self) -> &dyn Classifier {
        match self {
            Self::Logit(m) => m,
            Self::LassoLogit(m) => m,
            Self::Cart(m) => m,
            Self::RandomForest(m) => m,
            Self::GradientBoosting(m) => m,
            Self::NeuralNet(m) => m,
            Self::SuperLearner(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub family: Family,
    pub feature_mode: Option<FeatureMode>,
    pub feature_names: Vec<String>,
    pub training_config: TrainConfig,
    pub n_train: usize,
    pub parameters: Parameters,
}

impl ModelArtifact {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.n_features() {
            return Err(ModelError::SchemaMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        Ok(self.parameters.classifier().proba(features).clamp(0.0, 1.0))
    }

    pub fn features_for(&self, screens: &ScreenVector) -> Result<Vec<f64>, ModelError> {
        let mode = self.feature_mode.ok_or(ModelError::NoFeatureMode)?;
        Ok(mode.features(screens)?)
    }

    pub fn predict_screens(&self, screens: &ScreenVector) -> Result<f64, ModelError> {
        self.predict_proba(&self.features_for(screens)?)
    }

    pub fn classify(&self, features: &[f64], threshold: f64) -> Result<u8, ModelError> {
        classify_probability(self.predict_proba(features)?, threshold)
    }

    /// Probabilities for every row of `set`, in row order.
    pub fn predict_set(&self, set: &ExampleSet) -> Result<Vec<f64>, ModelError> {
        set.rows().map(|r| self.predict_proba(r)).collect()
    }

    pub fn as_cart(&self) -> Option<&CartModel> {
        match &self.parameters {
            Parameters::Cart(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let artifact: Self = serde_json::from_str(text)?;
        if artifact.schema_version != SCHEMA_VERSION {
            return Err(ModelError::InvalidConfig(format!(
                "unsupported schema version {}",
                artifact.schema_version
            )));
        }
        Ok(artifact)
    }
}

/// 1 iff `probability >= threshold`.
pub fn classify_probability(probability: f64, threshold: f64) -> Result<u8, ModelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ModelError::InvalidThreshold(threshold));
    }
    Ok(u8::from(probability >= threshold))
}

pub fn train(set: &ExampleSet, config: &TrainConfig) -> Result<ModelArtifact, ModelError> {
    if set.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let parameters = match config {
        TrainConfig::Logit(c) => Parameters::Logit(logit::train(set, c)?),
        TrainConfig::LassoLogit(c) => Parameters::LassoLogit(lasso::train(set, c)?),
        TrainConfig::Cart(c) => Parameters::Cart(cart::train(set, c)?),
        TrainConfig::RandomForest(c) => Parameters::RandomForest(forest::train(set, c)?),
        TrainConfig::GradientBoosting(c) => Parameters::GradientBoosting(boosting::train(set, c)?),
        TrainConfig::NeuralNet(c) => Parameters::NeuralNet(neural::train(set, c)?),
        TrainConfig::SuperLearner(c) => Parameters::SuperLearner(super_learner::train(set, c)?),
    };
    Ok(ModelArtifact {
        schema_version: SCHEMA_VERSION,
        family: config.family(),
        feature_mode: set.feature_mode(),
        feature_names: set.feature_names().to_vec(),
        training_config: config.clone(),
        n_train: set.n(),
        parameters,
    })
}

/// Deterministic stratified fold assignment: each class is shuffled with the
/// seed and dealt round-robin into `k` folds.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut crate::rng::unit_rng(seed, &[class as u64]));
        for (r, &i) in idx.iter().enumerate() {
            fold[i] = (r + offset) % k;
        }
        offset += idx.len();
    }
    fold
}

/// `(train, held_out)` index lists for fold `f`.
pub fn fold_split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}
