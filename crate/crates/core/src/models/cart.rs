//! Classification tree for the category manager's tool.
//!
//! The tree is grown greedily on weighted Gini impurity, then pruned by
//! minimal cost-complexity (weakest-link) pruning. The complexity parameter
//! is picked by stratified k-fold cross-validated accuracy: each fold grows
//! its own tree and is pruned at the geometric midpoints of the full tree's
//! critical alphas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{self, Columns, Criterion, GrowParams, Tree};
use super::{fold_split, stratified_folds, Classifier, ExampleSet, ModelError};
use crate::rng::unit_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSelection {
    /// Highest mean CV accuracy; ties go to the simpler tree.
    #[default]
    BestAccuracy,
    /// Simplest tree within one standard error of the best accuracy.
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartConfig {
    pub cv_folds: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub selection: AlphaSelection,
    pub seed: u64,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self {
            cv_folds: 10,
            min_leaf: 5,
            max_depth: None,
            selection: AlphaSelection::BestAccuracy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub alpha: f64,
    pub leaves: usize,
    pub accuracy: f64,
    pub accuracy_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartModel {
    pub tree: Tree,
    pub feature_names: Vec<String>,
    pub alpha: f64,
    pub cv: Vec<CvPoint>,
}

impl Classifier for CartModel {
    fn proba(&self, x: &[f64]) -> f64 {
        self.tree.predict(x)
    }
}

/// Misclassification count at a node if it were a leaf.
fn node_errors(tree: &Tree, i: usize) -> f64 {
    let n = &tree.nodes[i];
    let pos = n.positives();
    pos.min(n.samples - pos) as f64
}

/// Weakest-link link strength `g(t)` for every internal node of `tree`
/// (`None` for leaves), with risk measured as misclassified count / N.
fn link_strengths(tree: &Tree) -> Vec<Option<f64>> {
    let total = tree.root().samples as f64;
    let mut subtree_err = vec![0.0; tree.nodes.len()];
    let mut leaves = vec![0usize; tree.nodes.len()];
    let mut g = vec![None; tree.nodes.len()];
    // Children always have larger indices than their parent.
    for i in (0..tree.nodes.len()).rev() {
        match tree.nodes[i].split {
            None => {
                subtree_err[i] = node_errors(tree, i);
                leaves[i] = 1;
            }
            Some(s) => {
                let (l, r) = (s.left as usize, s.right as usize);
                subtree_err[i] = subtree_err[l] + subtree_err[r];
                leaves[i] = leaves[l] + leaves[r];
                g[i] = Some((node_errors(tree, i) - subtree_err[i]) / total / (leaves[i] - 1) as f64);
            }
        }
    }
    g
}

const ALPHA_TOL: f64 = 1e-12;

/// Prunes every subtree whose link strength is at most `alpha`, repeating
/// until none remain.
pub fn prune_at(tree: &Tree, alpha: f64) -> Tree {
    let mut current = tree.clone();
    loop {
        let g = link_strengths(&current);
        let weakest = g.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        if weakest > alpha + ALPHA_TOL {
            return current;
        }
        let flags: Vec<bool> = g.iter().map(|v| v.is_some_and(|v| v <= weakest + ALPHA_TOL)).collect();
        current = current.collapse(&flags);
    }
}

/// The nested sequence of optimally pruned subtrees with their critical
/// alphas, from the zero-cost subtree down to the root stump.
pub fn pruning_sequence(tree: &Tree) -> Vec<(f64, Tree)> {
    let mut seq = vec![(0.0, prune_at(tree, 0.0))];
    loop {
        let last = &seq.last().expect("non-empty").1;
        if last.root().is_leaf() {
            return seq;
        }
        let alpha = link_strengths(last)
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let next = prune_at(last, alpha);
        seq.push((alpha, next));
    }
}

fn grow_full(set: &ExampleSet, config: &CartConfig) -> Tree {
    let columns = Columns::from_rows(set.rows(), set.p());
    let targets: Vec<f64> = set.labels().iter().map(|&l| l as f64).collect();
    let rows: Vec<usize> = (0..set.n()).collect();
    tree::grow(
        &columns,
        &targets,
        &rows,
        Criterion::Gini,
        &GrowParams {
            min_leaf: config.min_leaf.max(1),
            max_depth: config.max_depth,
            mtry: None,
        },
        &mut unit_rng(config.seed, &[]),
    )
}

fn accuracy(tree: &Tree, set: &ExampleSet) -> f64 {
    let correct = set
        .rows()
        .zip(set.labels())
        .filter(|(r, &y)| tree.leaf(r).class() == y)
        .count();
    correct as f64 / set.n() as f64
}

pub fn train(set: &ExampleSet, config: &CartConfig) -> Result<CartModel, ModelError> {
    if set.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if config.cv_folds == 1 {
        return Err(ModelError::InvalidConfig("cv_folds must be 0 (no pruning) or >= 2".into()));
    }
    let full = grow_full(set, config);
    let feature_names = set.feature_names().to_vec();
    let [neg, pos] = set.class_counts();
    if config.cv_folds == 0 || neg.min(pos) < config.cv_folds {
        // Too few examples of a class to cross-validate: keep the zero-cost subtree.
        return Ok(CartModel {
            tree: prune_at(&full, 0.0),
            feature_names,
            alpha: 0.0,
            cv: Vec::new(),
        });
    }

    let seq = pruning_sequence(&full);
    let alphas: Vec<f64> = seq.iter().map(|(a, _)| *a).collect();
    let candidates: Vec<f64> = (0..alphas.len())
        .map(|k| match alphas.get(k + 1) {
            Some(next) => (alphas[k] * next).sqrt(),
            None => alphas[k] * 2.0 + 1.0,
        })
        .collect();

    let folds = stratified_folds(set.labels(), config.cv_folds, config.seed);
    let per_fold: Vec<Vec<f64>> = (0..config.cv_folds)
        .into_par_iter()
        .map(|f| {
            let (train_idx, held_idx) = fold_split(&folds, f);
            let train_set = set.subset(&train_idx);
            let held = set.subset(&held_idx);
            let fold_cfg = CartConfig {
                seed: crate::rng::derive_seed(config.seed, &[f as u64]),
                ..config.clone()
            };
            let fold_tree = grow_full(&train_set, &fold_cfg);
            candidates.iter().map(|&a| accuracy(&prune_at(&fold_tree, a), &held)).collect()
        })
        .collect();

    let k = config.cv_folds as f64;
    let cv: Vec<CvPoint> = seq
        .iter()
        .enumerate()
        .map(|(c, (alpha, t))| {
            let accs: Vec<f64> = per_fold.iter().map(|f| f[c]).collect();
            let mean = accs.iter().sum::<f64>() / k;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0);
            CvPoint {
                alpha: *alpha,
                leaves: t.n_leaves(),
                accuracy: mean,
                accuracy_se: (var / k).sqrt(),
            }
        })
        .collect();

    let best = cv
        .iter()
        .enumerate()
        .fold(0, |b, (c, p)| if p.accuracy >= cv[b].accuracy { c } else { b });
    let chosen = match config.selection {
        AlphaSelection::BestAccuracy => best,
        AlphaSelection::OneStandardError => {
            let floor = cv[best].accuracy - cv[best].accuracy_se;
            (best..cv.len()).rev().find(|&c| cv[c].accuracy >= floor).unwrap_or(best)
        }
    };
    Ok(CartModel {
        tree: seq[chosen].1.clone(),
        feature_names,
        alpha: alphas[chosen],
        cv,
    })
}

/// Compact fixed-point rendering that keeps at least two significant digits.
pub fn format_threshold(x: f64) -> String {
    let decimals = if x == 0.0 || x.abs() >= 1.0 {
        3
    } else {
        let lead = -x.abs().log10().floor() as i32;
        3.max(lead + 1) as usize
    };
    format!("{x:.decimals$}")
}

impl CartModel {
    fn test_label(&self, node: usize) -> String {
        let s = self.tree.nodes[node].split.expect("internal node");
        format!("{} ≥ {}", self.feature_names[s.feature as usize], format_threshold(s.threshold))
    }

    fn target_label(&self, node: usize) -> String {
        let n = &self.tree.nodes[node];
        if n.is_leaf() {
            n.class().to_string()
        } else {
            self.test_label(node)
        }
    }

    /// Human-readable walk of the decision path, one entry per test, e.g.
    /// `"cv ≥ 0.053? yes → 0"`.
    pub fn decision_path(&self, x: &[f64]) -> Vec<String> {
        let path = self.tree.path(x);
        path.windows(2)
            .map(|w| {
                let (node, right) = w[0];
                format!(
                    "{}? {} → {}",
                    self.test_label(node),
                    if right { "yes" } else { "no" },
                    self.target_label(w[1].0)
                )
            })
            .collect()
    }

    /// Indented text diagram of the whole tree.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(0, 0, "", &mut out);
        out
    }

    fn render_node(&self, node: usize, indent: usize, edge: &str, out: &mut String) {
        let n = &self.tree.nodes[node];
        let pad = "  ".repeat(indent);
        match n.split {
            None => out.push_str(&format!(
                "{pad}{edge}leaf {} (p = {:.3}, n = {})\n",
                n.class(),
                n.value,
                n.samples
            )),
            Some(s) => {
                out.push_str(&format!("{pad}{edge}{}? (n = {})\n", self.test_label(node), n.samples));
                self.render_node(s.right as usize, indent + 1, "yes: ", out);
                self.render_node(s.left as usize, indent + 1, "no: ", out);
            }
        }
    }
}
