//! Binary decision trees stored as a flat node arena.
//!
//! A row goes left when `x[feature] < threshold` and right otherwise.
//! Candidate thresholds are midpoints between consecutive distinct values of
//! the node's rows; among equally good splits the lower feature index wins,
//! then the lower threshold.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::UnitRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    #[serde(rename = "f")]
    pub feature: u32,
    #[serde(rename = "t")]
    pub threshold: f64,
    #[serde(rename = "l")]
    pub left: u32,
    #[serde(rename = "r")]
    pub right: u32,
}

/// `value` is the class-1 fraction for classification trees and the mean
/// target for regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(rename = "n")]
    pub samples: u32,
    #[serde(rename = "v")]
    pub value: f64,
    #[serde(rename = "s", default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Class-1 sample count of a classification node.
    pub fn positives(&self) -> u32 {
        (self.value * self.samples as f64).round() as u32
    }

    /// Majority class; a 50/50 node predicts 1.
    pub fn class(&self) -> u8 {
        u8::from(self.value >= 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            i = if x[s.feature as usize] < s.threshold { s.left } else { s.right } as usize;
        }
        i
    }

    pub fn leaf(&self, x: &[f64]) -> &Node {
        &self.nodes[self.leaf_index(x)]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf(x).value
    }

    /// Visited nodes from the root, each paired with whether the row went right
    /// (`x >= threshold`). The last entry is the leaf, paired with `false`.
    pub fn path(&self, x: &[f64]) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            let right = x[s.feature as usize] >= s.threshold;
            out.push((i, right));
            i = if right { s.right } else { s.left } as usize;
        }
        out.push((i, false));
        out
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i].split {
                None => 0,
                Some(s) => 1 + walk(t, s.left as usize).max(walk(t, s.right as usize)),
            }
        }
        walk(self, 0)
    }

    /// Internal node indices in preorder.
    pub fn internal_nodes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if let Some(s) = self.nodes[i].split {
                out.push(i);
                stack.push(s.right as usize);
                stack.push(s.left as usize);
            }
        }
        out
    }

    /// Copy of the tree with the given internal nodes turned into leaves and
    /// unreachable nodes removed.
    pub fn collapse(&self, make_leaf: &[bool]) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        let mut stack = vec![(0usize, None::<(usize, bool)>)];
        while let Some((src, parent)) = stack.pop() {
            let dst = nodes.len();
            let mut node = self.nodes[src].clone();
            if make_leaf[src] {
                node.split = None;
            }
            if let Some((p, is_right)) = parent {
                let s: &mut Split = nodes[p].split.as_mut().expect("parent is a split");
                if is_right {
                    s.right = dst as u32;
                } else {
                    s.left = dst as u32;
                }
            }
            if let Some(s) = node.split {
                stack.push((s.right as usize, Some((dst, true))));
                stack.push((s.left as usize, Some((dst, false))));
            }
            nodes.push(node);
        }
        Tree { nodes }
    }
}

/// Column-major copy of a design matrix for split search.
#[derive(Debug, Clone)]
pub struct Columns {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Columns {
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, p: usize) -> Self {
        let rows: Vec<&[f64]> = rows.collect();
        let n = rows.len();
        let mut data = vec![0.0; n * p];
        for (i, r) in rows.iter().enumerate() {
            for j in 0..p {
                data[j * n + i] = r[j];
            }
        }
        Self { n, p, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Weighted Gini impurity of 0/1 targets.
    Gini,
    /// Sum of squared errors of real targets.
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowParams {
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features sampled per split; `None` or `>= p` means all features.
    pub mtry: Option<usize>,
}

/// Best split of one node: child impurity (lower is better) plus location.
#[derive(Debug, Clone, Copy)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

/// Node impurity in the same units the split search minimizes:
/// `n * gini` for Gini, the SSE for squared error.
pub fn node_impurity(criterion: Criterion, targets: &[f64], rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    let sum: f64 = rows.iter().map(|&i| targets[i]).sum();
    match criterion {
        Criterion::Gini => 2.0 * sum * (n - sum) / n,
        Criterion::SquaredError => {
            let sq: f64 = rows.iter().map(|&i| targets[i] * targets[i]).sum();
            sq - sum * sum / n
        }
    }
}

fn child_impurity(criterion: Criterion, n_l: f64, s_l: f64, q_l: f64, n_r: f64, s_r: f64, q_r: f64) -> f64 {
    match criterion {
        Criterion::Gini => 2.0 * (s_l * (n_l - s_l) / n_l + s_r * (n_r - s_r) / n_r),
        Criterion::SquaredError => (q_l - s_l * s_l / n_l) + (q_r - s_r * s_r / n_r),
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Exhaustive search over `features` (ascending) for the split minimizing
/// child impurity, subject to `min_leaf` rows per side.
pub fn best_split(
    columns: &Columns,
    targets: &[f64],
    rows: &[usize],
    features: &[usize],
    criterion: Criterion,
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let total_s: f64 = rows.iter().map(|&i| targets[i]).sum();
    let total_q: f64 = rows.iter().map(|&i| targets[i] * targets[i]).sum();
    let parent = node_impurity(criterion, targets, rows);
    let tol = 1e-12 * parent.abs().max(1e-300);

    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        let col = columns.col(f);
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (col[i], targets[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        let (mut s_l, mut q_l) = (0.0, 0.0);
        for k in 1..n {
            let (x_prev, t_prev) = pairs[k - 1];
            s_l += t_prev;
            q_l += t_prev * t_prev;
            if k < min_leaf || n - k < min_leaf || x_prev == pairs[k].0 {
                continue;
            }
            let imp = child_impurity(
                criterion,
                k as f64,
                s_l,
                q_l,
                (n - k) as f64,
                total_s - s_l,
                total_q - q_l,
            );
            let better = match &best {
                None => true,
                Some(b) => imp < b.impurity - tol,
            };
            if better {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: midpoint(x_prev, pairs[k].0),
                    impurity: imp,
                });
            }
        }
    }
    best.filter(|b| b.impurity < parent - tol)
}

/// Grows a tree on `rows` (duplicates allowed, as in a bootstrap sample).
/// `rng` is only consulted when `mtry` restricts the candidate features.
pub fn grow(
    columns: &Columns,
    targets: &[f64],
    rows: &[usize],
    criterion: Criterion,
    params: &GrowParams,
    rng: &mut UnitRng,
) -> Tree {
    let p = columns.p();
    let mtry = params.mtry.map_or(p, |m| m.clamp(1, p));
    let all_features: Vec<usize> = (0..p).collect();

    let mut nodes: Vec<Node> = Vec::new();
    nodes.push(Node {
        samples: 0,
        value: 0.0,
        split: None,
    });
    let mut work: Vec<(usize, Vec<usize>, usize)> = vec![(0, rows.to_vec(), 0)];
    while let Some((idx, node_rows, depth)) = work.pop() {
        let n = node_rows.len();
        let sum: f64 = node_rows.iter().map(|&i| targets[i]).sum();
        nodes[idx].samples = n as u32;
        nodes[idx].value = if n > 0 { sum / n as f64 } else { 0.0 };

        let pure = match criterion {
            Criterion::Gini => sum == 0.0 || sum == n as f64,
            Criterion::SquaredError => node_impurity(criterion, targets, &node_rows) <= 0.0,
        };
        let depth_ok = params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || n < 2 {
            continue;
        }
        let features: Vec<usize> = if mtry < p {
            let mut f = index::sample(rng, p, mtry).into_vec();
            f.sort_unstable();
            f
        } else {
            all_features.clone()
        };
        let Some(best) = best_split(columns, targets, &node_rows, &features, criterion, params.min_leaf) else {
            continue;
        };
        let col = columns.col(best.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            node_rows.iter().partition(|&&i| col[i] < best.threshold);
        let left = nodes.len();
        nodes.push(Node {
            samples: 0,
            value: 0.0,
            split: None,
        });
        let right = nodes.len();
        nodes.push(Node {
            samples: 0,
            value: 0.0,
            split: None,
        });
        nodes[idx].split = Some(Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: left as u32,
            right: right as u32,
        });
        work.push((right, right_rows, depth + 1));
        work.push((left, left_rows, depth + 1));
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::unit_rng;

    fn cols(rows: &[Vec<f64>]) -> Columns {
        Columns::from_rows(rows.iter().map(Vec::as_slice), rows[0].len())
    }

    #[test]
    fn stump_on_threshold() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let all: Vec<usize> = (0..10).collect();
        let t = grow(
            &cols(&rows),
            &y,
            &all,
            Criterion::Gini,
            &GrowParams { min_leaf: 1, max_depth: None, mtry: None },
            &mut unit_rng(0, &[]),
        );
        assert_eq!(t.depth(), 1);
        let s = t.root().split.unwrap();
        assert_eq!(s.threshold, 3.5);
        assert_eq!(t.predict(&[2.0]), 1.0);
        assert_eq!(t.predict(&[3.5]), 0.0);
    }

    #[test]
    fn tie_breaks_toward_lower_feature() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let y = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let all: Vec<usize> = (0..6).collect();
        let best = best_split(&cols(&rows), &y, &all, &[0, 1], Criterion::Gini, 1).unwrap();
        assert_eq!(best.feature, 0);
        assert_eq!(best.threshold, 2.5);
    }

    #[test]
    fn min_leaf_respected() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let all: Vec<usize> = (0..6).collect();
        assert!(best_split(&cols(&rows), &y, &all, &[0], Criterion::Gini, 2)
            .map_or(true, |b| b.threshold >= 1.5));
    }

    #[test]
    fn regression_leaf_is_mean() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let y = vec![1.0, 3.0, 10.0, 12.0];
        let all: Vec<usize> = (0..4).collect();
        let t = grow(
            &cols(&rows),
            &y,
            &all,
            Criterion::SquaredError,
            &GrowParams { min_leaf: 2, max_depth: Some(1), mtry: None },
            &mut unit_rng(0, &[]),
        );
        assert_eq!(t.predict(&[0.0]), 2.0);
        assert_eq!(t.predict(&[3.0]), 11.0);
    }

    #[test]
    fn collapse_and_path() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let all: Vec<usize> = (0..8).collect();
        let t = grow(
            &cols(&rows),
            &y,
            &all,
            Criterion::Gini,
            &GrowParams { min_leaf: 1, max_depth: None, mtry: None },
            &mut unit_rng(0, &[]),
        );
        assert!(t.depth() >= 2);
        let mut flags = vec![false; t.nodes.len()];
        flags[0] = true;
        let stump = t.collapse(&flags);
        assert_eq!(stump.nodes.len(), 1);
        assert_eq!(stump.root().samples, 8);
        let path = t.path(&[7.0]);
        assert_eq!(path.last().unwrap().0, t.leaf_index(&[7.0]));
        let none = vec![false; t.nodes.len()];
        let copy = t.collapse(&none);
        for i in 0..8 {
            assert_eq!(copy.predict(&[i as f64]), t.predict(&[i as f64]));
        }
    }

    #[test]
    fn adjacent_float_midpoint() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a < m && m <= b);
    }

    #[test]
    fn best_split_matches_brute_force() {
        use rand::Rng;
        let mut rng = unit_rng(17, &[]);
        for _ in 0..200 {
            let n = rng.random_range(4..20);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| f64::from(rng.random_range(0..6u8))).collect())
                .collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let all: Vec<usize> = (0..n).collect();
            let min_leaf = rng.random_range(1..3);
            let found = best_split(&cols(&rows), &y, &all, &[0, 1, 2], Criterion::Gini, min_leaf);

            let gini = |idx: &[usize]| {
                let m = idx.len() as f64;
                let s: f64 = idx.iter().map(|&i| y[i]).sum();
                2.0 * s * (m - s) / m
            };
            let parent = gini(&all);
            let mut brute: Option<f64> = None;
            for f in 0..3 {
                for t in [0.5, 1.5, 2.5, 3.5, 4.5] {
                    let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| rows[i][f] < t);
                    if l.len() < min_leaf || r.len() < min_leaf {
                        continue;
                    }
                    let imp = gini(&l) + gini(&r);
                    if imp < parent - 1e-9 && brute.is_none_or(|b| imp < b) {
                        brute = Some(imp);
                    }
                }
            }
            match (found, brute) {
                (Some(a), Some(b)) => assert!((a.impurity - b).abs() < 1e-9),
                (None, None) => {}
                (a, b) => panic!("search {a:?} vs brute force {b:?}"),
            }
        }
    }
}
