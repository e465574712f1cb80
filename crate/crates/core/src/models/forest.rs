//! Random forest of unpruned Gini trees.
//!
//! Tree `k` draws its bootstrap sample and its per-split feature subsets from
//! a generator seeded with `(seed, k)`, so the forest is identical under any
//! thread schedule. The predicted probability is the fraction of trees
//! voting for class 1.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{self, Columns, Criterion, GrowParams, Tree};
use super::{Classifier, ExampleSet, ModelError};
use crate::rng::{unit_rng, UnitRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; defaults to `floor(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            mtry: None,
            min_leaf: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub mtry: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Number of trees whose leaf class for `x` is 1.
    pub fn votes(&self, x: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.leaf(x).class() == 1).count()
    }
}

impl Classifier for ForestModel {
    fn proba(&self, x: &[f64]) -> f64 {
        self.votes(x) as f64 / self.trees.len() as f64
    }
}

pub fn default_mtry(p: usize) -> usize {
    ((p as f64).sqrt().floor() as usize).max(1)
}

/// Generator for tree `k`; its first `n` draws are the bootstrap sample.
pub fn tree_rng(seed: u64, k: usize) -> UnitRng {
    unit_rng(seed, &[k as u64])
}

pub fn bootstrap_rows(rng: &mut UnitRng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn train(set: &ExampleSet, config: &ForestConfig) -> Result<ForestModel, ModelError> {
    set.require_both_classes()?;
    if config.n_trees == 0 {
        return Err(ModelError::InvalidConfig("n_trees must be positive".into()));
    }
    let columns = Columns::from_rows(set.rows(), set.p());
    let targets: Vec<f64> = set.labels().iter().map(|&l| l as f64).collect();
    let mtry = config.mtry.unwrap_or_else(|| default_mtry(set.p())).clamp(1, set.p());
    let params = GrowParams {
        min_leaf: config.min_leaf.max(1),
        max_depth: config.max_depth,
        mtry: Some(mtry),
    };
    let n = set.n();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = tree_rng(config.seed, k);
            let rows = bootstrap_rows(&mut rng, n);
            tree::grow(&columns, &targets, &rows, Criterion::Gini, &params, &mut rng)
        })
        .collect();
    Ok(ForestModel { mtry, trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> ExampleSet {
        let mut rng = unit_rng(5, &[]);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let labels = rows.iter().map(|r| u8::from(r[0] + 0.3 * r[1] > 0.6)).collect();
        ExampleSet::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn one_tree_equals_grow_on_its_bootstrap() {
        let set = data();
        let config = ForestConfig {
            n_trees: 1,
            mtry: Some(3),
            seed: 9,
            ..ForestConfig::default()
        };
        let forest = train(&set, &config).unwrap();
        let mut rng = tree_rng(9, 0);
        let rows = bootstrap_rows(&mut rng, set.n());
        let targets: Vec<f64> = set.labels().iter().map(|&l| l as f64).collect();
        let params = GrowParams {
            min_leaf: 1,
            max_depth: None,
            mtry: Some(3),
        };
        let expected = tree::grow(
            &Columns::from_rows(set.rows(), 3),
            &targets,
            &rows,
            Criterion::Gini,
            &params,
            &mut rng,
        );
        assert_eq!(forest.trees[0], expected);
        for r in set.rows() {
            assert_eq!(forest.proba(r), f64::from(expected.leaf(r).class()));
        }
    }

    #[test]
    fn proba_is_vote_fraction_and_seeded() {
        let set = data();
        let config = ForestConfig {
            n_trees: 25,
            seed: 3,
            ..ForestConfig::default()
        };
        let a = train(&set, &config).unwrap();
        assert_eq!(a, train(&set, &config).unwrap());
        assert_eq!(a.mtry, 1);
        let x = set.row(0);
        assert_eq!(a.proba(x), a.votes(x) as f64 / 25.0);
    }
}
