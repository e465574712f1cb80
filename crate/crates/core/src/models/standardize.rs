use serde::{Deserialize, Serialize};

use super::ExampleSet;

/// Per-feature centering and scaling fitted on training data.
/// Constant columns keep scale 1 and are flagged inactive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub active: Vec<bool>,
}

impl Standardizer {
    pub fn fit(set: &ExampleSet) -> Self {
        let n = set.n() as f64;
        let p = set.p();
        let mut mean = vec![0.0; p];
        for row in set.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for row in set.rows() {
            for j in 0..p {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let mut scale = Vec::with_capacity(p);
        let mut active = Vec::with_capacity(p);
        for v in var {
            let sd = (v / n).sqrt();
            let is_active = sd.is_finite() && sd > 0.0;
            scale.push(if is_active { sd } else { 1.0 });
            active.push(is_active);
        }
        Self { mean, scale, active }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, x)| if self.active[j] { (x - self.mean[j]) / self.scale[j] } else { 0.0 })
            .collect()
    }

    pub fn transform_set(&self, set: &ExampleSet) -> Vec<Vec<f64>> {
        set.rows().map(|r| self.transform(r)).collect()
    }

    /// Maps standardized-space coefficients back to raw feature units.
    pub fn to_raw(&self, intercept: f64, coefficients: &[f64]) -> (f64, Vec<f64>) {
        let mut b0 = intercept;
        let raw: Vec<f64> = coefficients
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                if !self.active[j] {
                    return 0.0;
                }
                b0 -= b * self.mean[j] / self.scale[j];
                b / self.scale[j]
            })
            .collect();
        (b0, raw)
    }
}
