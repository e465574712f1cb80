//! Out-of-sample evaluation: stratified train/test splits, confusion-based
//! metrics, percentile intervals over repeated random splits, threshold
//! sweeps and permutation importance.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{self, classify_probability, ExampleSet, Family, ModelArtifact, ModelError, TrainConfig};
use crate::rng::{derive_seed, unit_rng};
use crate::screens::{self, FeatureMode, N_SCREENS, SCREEN_NAMES};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("EmptyClass: train {train:?} / test {test:?} [competition, cartel] counts leave a class empty")]
    EmptyClass { train: [usize; 2], test: [usize; 2] },
    #[error("EmptyInput: nothing to evaluate")]
    EmptyInput,
    #[error("InvalidRatio: {0} is not in (0, 1]")]
    InvalidRatio(f64),
    #[error("InvalidReplicates: need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("ZeroImportanceEverywhere: no feature permutation lowers the metric")]
    ZeroImportanceEverywhere,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
}

/// Ascending `(train, test)` index lists. Each class is shuffled and split
/// separately; class quotas are rounded so the training share of the whole
/// set is `round(ratio * n)` (largest remainders first).
pub fn split_indices(labels: &[u8], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvaluationError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(EvaluationError::InvalidRatio(ratio));
    }
    let by_class: Vec<Vec<usize>> = (0..2u8)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let target = (ratio * labels.len() as f64).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|c| ratio * c.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &c in &order {
        if quota.iter().sum::<usize>() < target && quota[c] < by_class[c].len() {
            quota[c] += 1;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, idx) in by_class.into_iter().enumerate() {
        let mut idx = idx;
        idx.shuffle(&mut unit_rng(seed, &[c as u64]));
        train.extend_from_slice(&idx[..quota[c]]);
        test.extend_from_slice(&idx[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified random split; both parts must contain both classes.
pub fn split(set: &ExampleSet, ratio: f64, seed: u64) -> Result<(ExampleSet, ExampleSet), EvaluationError> {
    let (train_idx, test_idx) = split_indices(set.labels(), ratio, seed)?;
    let train = set.subset(&train_idx);
    let test = set.subset(&test_idx);
    let (a, b) = (train.class_counts(), test.class_counts());
    if a.contains(&0) || b.contains(&0) {
        return Err(EvaluationError::EmptyClass { train: a, test: b });
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ccr: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        // 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn) whenever both are defined.
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) if c.tp > 0 => Some(2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64),
            _ => None,
        };
        Self {
            ccr: (c.tp + c.tn) as f64 / c.total() as f64,
            precision,
            recall,
            f1,
            fpr: ratio(c.fp, c.fp + c.tn),
            confusion: c,
        }
    }

    pub fn get(&self, metric: MetricName) -> Option<f64> {
        match metric {
            MetricName::Ccr => Some(self.ccr),
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
            MetricName::Fpr => self.fpr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Ccr,
    Precision,
    Recall,
    F1,
    Fpr,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [Self::Ccr, Self::Precision, Self::Recall, Self::F1, Self::Fpr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ccr => "ccr",
            Self::Precision => "precision",
            Self::Recall => "recall",
            Self::F1 => "f1",
            Self::Fpr => "fpr",
        }
    }
}

/// `(probability, label)` pairs classified at `threshold`.
pub fn compute_metrics(predictions: &[(f64, u8)], threshold: f64) -> Result<Metrics, EvaluationError> {
    if predictions.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let mut c = Confusion::default();
    for &(p, y) in predictions {
        if y > 1 {
            return Err(ModelError::InvalidLabel(y).into());
        }
        match (classify_probability(p, threshold)?, y) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(Metrics::from_confusion(c))
}

/// Pairs the model's test-set probabilities with the labels.
pub fn predictions(model: &ModelArtifact, test: &ExampleSet) -> Result<Vec<(f64, u8)>, EvaluationError> {
    let p = model.predict_set(test)?;
    Ok(p.into_iter().zip(test.labels().iter().copied()).collect())
}

/// Empirical percentile with the nearest-rank rule: the `ceil(q * n)`-th
/// smallest value.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
    /// Replicates in which the metric was defined.
    pub n_defined: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleOptions {
    pub replicates: usize,
    pub ratio: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self {
            replicates: 2000,
            ratio: 0.75,
            alpha: 0.05,
            threshold: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub alpha: f64,
    pub replicates: usize,
    /// Keyed by metric; `None` when the metric was never defined.
    pub ccr: Option<Interval>,
    pub precision: Option<Interval>,
    pub recall: Option<Interval>,
    pub f1: Option<Interval>,
    pub fpr: Option<Interval>,
}

impl Intervals {
    pub fn get(&self, metric: MetricName) -> Option<&Interval> {
        match metric {
            MetricName::Ccr => self.ccr.as_ref(),
            MetricName::Precision => self.precision.as_ref(),
            MetricName::Recall => self.recall.as_ref(),
            MetricName::F1 => self.f1.as_ref(),
            MetricName::Fpr => self.fpr.as_ref(),
        }
    }

    fn from_replicates(replicates: &[Metrics], alpha: f64) -> Self {
        let summarize = |m: MetricName| {
            let mut v: Vec<f64> = replicates.iter().filter_map(|r| r.get(m)).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(Interval {
                lower: percentile(&v, alpha / 2.0),
                median: percentile(&v, 0.5),
                upper: percentile(&v, 1.0 - alpha / 2.0),
                n_defined: v.len(),
            })
        };
        Self {
            alpha,
            replicates: replicates.len(),
            ccr: summarize(MetricName::Ccr),
            precision: summarize(MetricName::Precision),
            recall: summarize(MetricName::Recall),
            f1: summarize(MetricName::F1),
            fpr: summarize(MetricName::Fpr),
        }
    }
}

/// Test metrics of one replicate: split with the replicate seed, train a
/// fresh model reseeded likewise, score the held-out part.
pub fn replicate_metrics(
    set: &ExampleSet,
    config: &TrainConfig,
    options: &ResampleOptions,
    b: usize,
) -> Result<Metrics, EvaluationError> {
    let seed = derive_seed(options.seed, &[b as u64]);
    let (train, test) = split(set, options.ratio, seed)?;
    let model = models::train(&train, &config.with_seed(seed))?;
    compute_metrics(&predictions(&model, &test)?, options.threshold)
}

/// Percentile intervals over `replicates` independent random splits
/// (sampling without replacement). Replicates run in parallel; the result
/// does not depend on scheduling.
pub fn resample_intervals(
    set: &ExampleSet,
    config: &TrainConfig,
    options: &ResampleOptions,
) -> Result<(Intervals, Vec<Metrics>), EvaluationError> {
    if options.replicates < 2 {
        return Err(EvaluationError::TooFewReplicates(options.replicates));
    }
    let replicates = (0..options.replicates)
        .into_par_iter()
        .map(|b| replicate_metrics(set, config, options, b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Intervals::from_replicates(&replicates, options.alpha), replicates))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub ccr: f64,
    pub fpr: Option<f64>,
    pub flagged: usize,
}

/// Thresholds 0.50, 0.51, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (50..=95).map(|k| k as f64 / 100.0).collect()
}

pub fn threshold_sweep(predictions: &[(f64, u8)], grid: &[f64]) -> Result<Vec<SweepPoint>, EvaluationError> {
    grid.iter()
        .map(|&t| {
            let m = compute_metrics(predictions, t)?;
            Ok(SweepPoint {
                threshold: t,
                ccr: m.ccr,
                fpr: m.fpr,
                flagged: m.confusion.tp + m.confusion.fp,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(sweep: &[SweepPoint], writer: W) -> Result<(), EvaluationError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "ccr", "fpr", "flagged"])?;
    for p in sweep {
        w.write_record([
            p.threshold.to_string(),
            p.ccr.to_string(),
            p.fpr.map(|v| v.to_string()).unwrap_or_default(),
            p.flagged.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// What gets permuted together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceGrouping {
    /// Each model input column on its own.
    #[default]
    Feature,
    /// Each raw screen, with every expanded term that contains it recomputed.
    Screen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceOptions {
    pub repeats: usize,
    pub threshold: f64,
    pub grouping: ImportanceGrouping,
    pub seed: u64,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        Self {
            repeats: 10,
            threshold: 0.5,
            grouping: ImportanceGrouping::Feature,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importances {
    pub names: Vec<String>,
    /// Mean CCR drop per permuted group.
    pub drops: Vec<f64>,
    /// `drops` divided by their maximum.
    pub relative: Vec<f64>,
}

impl Importances {
    /// `(name, relative)` sorted by importance, most important first.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.names.iter().map(String::as_str).zip(self.relative.iter().copied()).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }
}

fn ccr_of(model: &ModelArtifact, rows: &[Vec<f64>], labels: &[u8], threshold: f64) -> Result<f64, EvaluationError> {
    let mut correct = 0usize;
    for (r, &y) in rows.iter().zip(labels) {
        if model.classify(r, threshold)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// Mean drop in test CCR when one feature (or one screen) is shuffled across
/// test rows, normalized so the most important scores 1.
pub fn permutation_importance(
    model: &ModelArtifact,
    test: &ExampleSet,
    options: &ImportanceOptions,
) -> Result<Importances, EvaluationError> {
    if test.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let rows: Vec<Vec<f64>> = test.rows().map(<[f64]>::to_vec).collect();
    let labels = test.labels();
    let base = ccr_of(model, &rows, labels, options.threshold)?;
    let by_screen = options.grouping == ImportanceGrouping::Screen && test.feature_mode().is_some();
    let (names, groups): (Vec<String>, usize) = if by_screen {
        (SCREEN_NAMES.iter().map(|s| s.to_string()).collect(), N_SCREENS)
    } else {
        (test.feature_names().to_vec(), test.p())
    };
    let expanded = test.feature_mode() == Some(FeatureMode::Expanded);

    let mut drops = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut total = 0.0;
        for r in 0..options.repeats.max(1) {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut unit_rng(options.seed, &[g as u64, r as u64]));
            let permuted: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut out = row.clone();
                    out[g] = rows[order[i]][g];
                    if by_screen && expanded {
                        let raw: [f64; N_SCREENS] = out[..N_SCREENS].try_into().expect("screen prefix");
                        out = screens::expand_array(&raw);
                    }
                    out
                })
                .collect();
            total += base - ccr_of(model, &permuted, labels, options.threshold)?;
        }
        drops.push(total / options.repeats.max(1) as f64);
    }
    let max = drops.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(EvaluationError::ZeroImportanceEverywhere);
    }
    let relative = drops.iter().map(|d| d / max).collect();
    Ok(Importances { names, drops, relative })
}

pub fn write_importances_csv<W: Write>(imp: &Importances, writer: W) -> Result<(), EvaluationError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "drop", "relative"])?;
    for ((n, d), r) in imp.names.iter().zip(&imp.drops).zip(&imp.relative) {
        w.write_record([n.clone(), d.to_string(), r.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub ratio: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Interval replicates; fewer than 2 skips the intervals.
    pub replicates: usize,
    pub alpha: f64,
    pub importance_repeats: usize,
    pub importance_grouping: ImportanceGrouping,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            ratio: 0.75,
            threshold: 0.5,
            seed: 0,
            replicates: 0,
            alpha: 0.05,
            importance_repeats: 10,
            importance_grouping: ImportanceGrouping::Feature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub family: Family,
    pub config: EvaluationConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub point_metrics: Metrics,
    pub intervals: Option<Intervals>,
    pub sweep: Vec<SweepPoint>,
    /// Absent when no permutation changed the metric.
    pub importances: Option<Importances>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }
}

/// Split, train, score, sweep, importance and (optionally) intervals for one
/// training configuration. The model is trained with the configuration as
/// given; the split uses `config.seed`.
pub fn evaluate(
    set: &ExampleSet,
    train_config: &TrainConfig,
    config: &EvaluationConfig,
) -> Result<(EvaluationReport, ModelArtifact), EvaluationError> {
    let (train, test) = split(set, config.ratio, config.seed)?;
    let model = models::train(&train, train_config)?;
    let preds = predictions(&model, &test)?;
    let point_metrics = compute_metrics(&preds, config.threshold)?;
    let sweep = threshold_sweep(&preds, &default_grid())?;
    let importances = match permutation_importance(
        &model,
        &test,
        &ImportanceOptions {
            repeats: config.importance_repeats,
            threshold: config.threshold,
            grouping: config.importance_grouping,
            seed: config.seed,
        },
    ) {
        Ok(imp) => Some(imp),
        Err(EvaluationError::ZeroImportanceEverywhere) => {
            log::warn!("every permutation importance is zero; skipping normalization");
            None
        }
        Err(e) => return Err(e),
    };
    let intervals = if config.replicates >= 2 {
        let options = ResampleOptions {
            replicates: config.replicates,
            ratio: config.ratio,
            alpha: config.alpha,
            threshold: config.threshold,
            seed: config.seed,
        };
        Some(resample_intervals(set, train_config, &options)?.0)
    } else {
        None
    };
    let report = EvaluationReport {
        family: model.family,
        config: *config,
        n_train: train.n(),
        n_test: test.n(),
        point_metrics,
        intervals,
        sweep,
        importances,
    };
    Ok((report, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(tp: usize, fp: usize, fn_: usize, tn: usize) -> Confusion {
        Confusion { tp, fp, fn_, tn }
    }

    #[test]
    fn hand_computed_metrics() {
        let m = Metrics::from_confusion(c(2, 1, 1, 6));
        assert_eq!(m.precision, Some(2.0 / 3.0));
        assert_eq!(m.recall, Some(2.0 / 3.0));
        assert_eq!(m.f1, Some(2.0 / 3.0));
        assert_eq!(m.ccr, 0.8);
        assert_eq!(m.fpr, Some(1.0 / 7.0));
    }

    #[test]
    fn undefined_ratios_are_none() {
        let m = Metrics::from_confusion(c(0, 0, 0, 5));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.ccr, 1.0);
        let m = Metrics::from_confusion(c(0, 2, 3, 0));
        assert_eq!(m.precision, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn metrics_from_predictions() {
        let preds = [(0.9, 1), (0.6, 0), (0.4, 1), (0.1, 0), (0.5, 1)];
        let m = compute_metrics(&preds, 0.5).unwrap();
        assert_eq!(m.confusion, c(2, 1, 1, 1));
        assert!(matches!(compute_metrics(&[], 0.5), Err(EvaluationError::EmptyInput)));
        assert!(compute_metrics(&preds, 1.5).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 4 == 0)).collect();
        let (tr, te) = split_indices(&labels, 0.75, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (75, 25));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!((tr.clone(), te.clone()), split_indices(&labels, 0.75, 3).unwrap());
        assert_eq!(te.iter().filter(|&&i| labels[i] == 1).count(), 6);
    }

    #[test]
    fn full_ratio_is_empty_class() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let set = ExampleSet::from_rows(rows, vec![0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
        assert!(matches!(split(&set, 1.0, 0), Err(EvaluationError::EmptyClass { .. })));
        assert!(matches!(split(&set, 0.0, 0), Err(EvaluationError::InvalidRatio(_))));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v = [0.6, 0.9];
        assert_eq!(percentile(&v, 0.025), 0.6);
        assert_eq!(percentile(&v, 0.975), 0.9);
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.025), 5.0);
        assert_eq!(percentile(&v, 0.975), 195.0);
        assert_eq!(percentile(&v, 0.5), 100.0);
    }

    #[test]
    fn sweep_without_positive_predictions() {
        let preds = [(0.1, 1), (0.2, 0), (0.49, 0)];
        let sweep = threshold_sweep(&preds, &default_grid()).unwrap();
        assert_eq!(sweep.len(), 46);
        assert!(sweep.iter().all(|p| p.fpr == Some(0.0) && p.flagged == 0));
    }

    #[test]
    fn sweep_csv_has_header_and_rows() {
        let sweep = threshold_sweep(&[(0.7, 1), (0.6, 0)], &[0.5, 0.65]).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&sweep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "threshold,ccr,fpr,flagged\n0.5,0.5,1,2\n0.65,1,0,1\n");
    }
}
