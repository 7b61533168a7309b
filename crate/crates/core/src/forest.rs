//! Random forest of Gini-split decision trees.
//!
//! Each tree is grown on a bootstrap sample of the training records and on a
//! random subset of the features; the forest decides by the sign of the mean
//! tree vote. The out-of-bag error curve is recorded at fit time.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::seed;

/// Trees added after the selected count must not improve OOB error by this much.
pub const FLAT_GAIN: f64 = 0.0025;
/// Fewest trees [`select_tree_count`] will settle on.
pub const MIN_SELECTED_TREES: usize = 20;
const SPLIT_EPS: f64 = 1e-12;

/// Gini impurity `1 - p+^2 - p-^2` of a binary class distribution.
pub fn gini(positive: f64, negative: f64) -> Result<f64> {
    if positive < 0.0 || negative < 0.0 || ((positive + negative) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "({positive}, {negative}) is not a probability pair"
        )));
    }
    Ok(1.0 - positive * positive - negative * negative)
}

fn gini_counts(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFractions {
    pub positive: f64,
    pub negative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Records with `x[feature] <= threshold`.
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        decision: Label,
        class_fractions: ClassFractions,
    },
}

impl TreeNode {
    pub fn decide(&self, x: &[f64]) -> Label {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { decision, .. } => return *decision,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Number of splits traversed to reach a leaf for `x`.
    pub fn path_length(&self, x: &[f64]) -> usize {
        let mut node = self;
        let mut steps = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if x[*feature] <= *threshold { left } else { right };
            steps += 1;
        }
        steps
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaf(y: &[Label], idx: &[usize]) -> TreeNode {
        let pos = idx.iter().filter(|&&i| y[i].is_positive()).count();
        let positive = pos as f64 / idx.len() as f64;
        TreeNode::Leaf {
            decision: if 2 * pos > idx.len() {
                Label::Positive
            } else {
                Label::Negative
            },
            class_fractions: ClassFractions {
                positive,
                negative: 1.0 - positive,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Best Gini split of all records in `x`/`y` over `candidate_features`.
pub fn best_split(x: &[Vec<f64>], y: &[Label], candidate_features: &[usize]) -> Option<SplitCandidate> {
    let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let idx: Vec<usize> = (0..rows.len()).collect();
    best_split_indexed(&rows, y, &idx, candidate_features)
}

/// Thresholds are midpoints between consecutive distinct values. Ties go to
/// the lowest feature index, then the lowest threshold.
fn best_split_indexed(x: &[&[f64]], y: &[Label], idx: &[usize], features: &[usize]) -> Option<SplitCandidate> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let total_pos = idx.iter().filter(|&&i| y[i].is_positive()).count();
    let parent = gini_counts(total_pos, n);
    if parent == 0.0 {
        return None;
    }
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, bool)> = Vec::with_capacity(n);
    for &f in &features {
        order.clear();
        order.extend(idx.iter().map(|&i| (x[i][f], y[i].is_positive())));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for s in 0..n - 1 {
            if order[s].1 {
                left_pos += 1;
            }
            if order[s].0 == order[s + 1].0 {
                continue;
            }
            let nl = s + 1;
            let nr = n - nl;
            let weighted = (nl as f64 * gini_counts(left_pos, nl)
                + nr as f64 * gini_counts(total_pos - left_pos, nr))
                / n as f64;
            let better = match best {
                None => true,
                Some((w, _, _)) => weighted < w - SPLIT_EPS,
            };
            if better {
                best = Some((weighted, f, 0.5 * (order[s].0 + order[s + 1].0)));
            }
        }
    }
    best.and_then(|(weighted, feature, threshold)| {
        let decrease = parent - weighted;
        (decrease > SPLIT_EPS).then_some(SplitCandidate {
            feature,
            threshold,
            impurity_decrease: decrease,
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// `ceil(sqrt(d))` features per tree.
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubset {
    fn size(self, d: usize) -> usize {
        match self {
            FeatureSubset::Sqrt => (d as f64).sqrt().ceil() as usize,
            FeatureSubset::All => d,
            FeatureSubset::Count(c) => c,
        }
        .clamp(1, d.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub max_depth: usize,
    pub min_node_size: usize,
    pub features_per_tree: FeatureSubset,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            max_depth: 16,
            min_node_size: 2,
            features_per_tree: FeatureSubset::Sqrt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: TreeNode,
    /// Distinct record indices drawn into the bootstrap sample, ascending.
    pub in_bag: Vec<usize>,
    pub features: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub dim: usize,
    /// OOB error after each tree prefix, `oob_curve[t-1]` for `t` trees.
    pub oob_curve: Vec<f64>,
}

impl ForestModel {
    pub fn decide(&self, x: &[f64]) -> Result<Label> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(vote(self.trees.iter().map(|t| t.root.decide(x))))
    }

    /// Keeps the first `count` trees.
    pub fn truncate(&mut self, count: usize) {
        let count = count.max(1);
        self.trees.truncate(count);
        self.oob_curve.truncate(count);
    }
}

/// Sign of the mean of ±1 votes; zero goes to `Negative`.
pub fn vote(votes: impl Iterator<Item = Label>) -> Label {
    Label::from_sign(votes.map(Label::sign).sum())
}

pub fn forest_decide(model: &ForestModel, x: &[f64]) -> Result<Label> {
    model.decide(x)
}

fn grow(x: &[&[f64]], y: &[Label], idx: &[usize], features: &[usize], depth: usize, cfg: &ForestConfig) -> TreeNode {
    let pos = idx.iter().filter(|&&i| y[i].is_positive()).count();
    let pure = pos == 0 || pos == idx.len();
    if pure || idx.len() < cfg.min_node_size.max(2) || depth >= cfg.max_depth {
        return TreeNode::leaf(y, idx);
    }
    match best_split_indexed(x, y, idx, features) {
        None => TreeNode::leaf(y, idx),
        Some(split) => {
            let (left, right): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][split.feature] <= split.threshold);
            TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(grow(x, y, &left, features, depth + 1, cfg)),
                right: Box::new(grow(x, y, &right, features, depth + 1, cfg)),
            }
        }
    }
}

fn grow_tree(x: &[&[f64]], y: &[Label], tree_seed: u64, cfg: &ForestConfig) -> Tree {
    let n = x.len();
    let d = x[0].len();
    let mut rng = seed::rng(tree_seed);
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut features = index::sample(&mut rng, d, cfg.features_per_tree.size(d)).into_vec();
    features.sort_unstable();
    let root = grow(x, y, &sample, &features, 0, cfg);
    let mut in_bag = sample;
    in_bag.sort_unstable();
    in_bag.dedup();
    Tree {
        root,
        in_bag,
        features,
    }
}

/// Grows `max_trees` trees (in parallel; tree `t` uses a seed derived from
/// `seed` and `t`) and records the OOB curve.
pub fn train_forest(train: &Dataset, max_trees: usize, seed: u64, config: &ForestConfig) -> Result<ForestModel> {
    if max_trees == 0 {
        return Err(Error::InvalidParameter("max_trees must be positive".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClassTraining);
    }
    let x: Vec<&[f64]> = train.records.iter().map(|r| r.features.as_slice()).collect();
    let y = train.labels();
    let trees: Vec<Tree> = (0..max_trees as u64)
        .into_par_iter()
        .map(|t| grow_tree(&x, &y, seed::derive(seed, t), config))
        .collect();
    let mut model = ForestModel {
        trees,
        dim: train.dim(),
        oob_curve: Vec::new(),
    };
    model.oob_curve = oob_error(&model, train);
    Ok(model)
}

/// OOB error for every tree prefix. Records without any OOB vote so far are
/// skipped; an entry with no scored record at all is 0.5.
pub fn oob_error(model: &ForestModel, train: &Dataset) -> Vec<f64> {
    let n = train.len();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    let mut in_bag = vec![false; n];
    let mut curve = Vec::with_capacity(model.trees.len());
    for tree in &model.trees {
        in_bag.iter_mut().for_each(|b| *b = false);
        for &i in &tree.in_bag {
            if i < n {
                in_bag[i] = true;
            }
        }
        for (i, r) in train.records.iter().enumerate() {
            if !in_bag[i] {
                sums[i] += tree.root.decide(&r.features).sign();
                counts[i] += 1;
            }
        }
        let (mut wrong, mut scored) = (0usize, 0usize);
        for (i, r) in train.records.iter().enumerate() {
            if counts[i] > 0 {
                scored += 1;
                if Label::from_sign(sums[i]) != r.label {
                    wrong += 1;
                }
            }
        }
        curve.push(if scored == 0 {
            0.5
        } else {
            wrong as f64 / scored as f64
        });
    }
    curve
}

/// Smallest tree count `t >= MIN_SELECTED_TREES` whose OOB error no later prefix
/// beats by [`FLAT_GAIN`] or more; the full length if none qualifies.
pub fn select_tree_count(oob_curve: &[f64]) -> usize {
    let len = oob_curve.len();
    // suffix_min[t] = min of oob_curve[t..]
    let mut suffix_min = vec![f64::INFINITY; len + 1];
    for t in (0..len).rev() {
        suffix_min[t] = suffix_min[t + 1].min(oob_curve[t]);
    }
    (MIN_SELECTED_TREES.min(len).max(1)..len)
        .find(|&t| oob_curve[t - 1] - suffix_min[t] < FLAT_GAIN)
        .unwrap_or(len.max(1))
}
