//! Multiclass gradient boosting with softmax loss, built from scratch.
//!
//! Per-class scores start at the log class priors. Each round fits one
//! depth-limited regression tree per class to the negative gradient
//! (one-hot minus softmax probability) using exact greedy variance-reduction
//! splits; leaf values are a single Newton step (gradient sum over hessian
//! sum), scaled by the learning rate before being stored. Training is
//! deterministic given the input order and hyperparameters; per-class tree
//! fits within a round run in parallel and merge by class index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Score assigned in place of ln(0) for classes absent from the training
/// set; low enough that exp underflows to exactly 0 under softmax.
const LOG_ZERO_PRIOR: f64 = -1.0e3;

const MIN_HESSIAN_SUM: f64 = 1e-12;
const MIN_SPLIT_GAIN: f64 = 1e-12;

/// Boosting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
        }
    }
}

impl BoostingParams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Binary regression tree node. Samples with `feature < threshold` descend
/// left. Leaf values already include the learning-rate scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] < *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Number of nodes, for diagnostics.
    pub fn size(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.size() + right.size(),
        }
    }
}

/// Trained multiclass ensemble: `trees[round][class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtEnsemble {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub initial_scores: Vec<f64>,
    pub trees: Vec<Vec<TreeNode>>,
    pub params: BoostingParams,
}

impl GbdtEnsemble {
    /// Raw per-class scores for one sample.
    pub fn scores(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::Dimension(format!(
                "feature vector has {} values, model expects {}",
                features.len(),
                self.feature_dim
            )));
        }
        let mut scores = self.initial_scores.clone();
        for round in &self.trees {
            for (c, tree) in round.iter().enumerate() {
                scores[c] += tree.predict(features);
            }
        }
        Ok(scores)
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-feature sample orderings, computed once and reused by every node of
/// every tree in a training run.
struct SortedColumns {
    /// order[f] = sample indices sorted ascending by feature f (ties by index).
    order: Vec<Vec<usize>>,
}

impl SortedColumns {
    fn new(rows: &[Vec<f64>], feature_dim: usize) -> SortedColumns {
        let order = par::map_range(feature_dim, |f| {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]).then(a.cmp(&b)));
            idx
        });
        SortedColumns { order }
    }
}

struct TreeFitter<'a> {
    rows: &'a [Vec<f64>],
    columns: &'a SortedColumns,
    gradients: &'a [f64],
    hessians: &'a [f64],
    params: &'a BoostingParams,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeFitter<'_> {
    fn fit(&self, in_node: &mut [bool], count: usize, depth: usize) -> TreeNode {
        let (grad_sum, hess_sum) = self.node_sums(in_node);
        if depth >= self.params.max_depth || count < 2 * self.params.min_leaf {
            return self.leaf(grad_sum, hess_sum);
        }
        let Some(split) = self.best_split(in_node, count, grad_sum) else {
            return self.leaf(grad_sum, hess_sum);
        };
        let mut left_mask = vec![false; self.rows.len()];
        let mut left_count = 0usize;
        for (i, row) in self.rows.iter().enumerate() {
            if in_node[i] && row[split.feature] < split.threshold {
                left_mask[i] = true;
                in_node[i] = false;
                left_count += 1;
            }
        }
        let right_count = count - left_count;
        let left = self.fit(&mut left_mask, left_count, depth + 1);
        let right = self.fit(in_node, right_count, depth + 1);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn node_sums(&self, in_node: &[bool]) -> (f64, f64) {
        let mut grad = 0.0;
        let mut hess = 0.0;
        for (i, &present) in in_node.iter().enumerate() {
            if present {
                grad += self.gradients[i];
                hess += self.hessians[i];
            }
        }
        (grad, hess)
    }

    fn leaf(&self, grad_sum: f64, hess_sum: f64) -> TreeNode {
        let value = if hess_sum < MIN_HESSIAN_SUM {
            0.0
        } else {
            self.params.learning_rate * grad_sum / hess_sum
        };
        TreeNode::Leaf { value }
    }

    /// Exact greedy search over every feature and every boundary between
    /// distinct values; gain is the variance-reduction surrogate
    /// S_L²/n_L + S_R²/n_R − S²/n on the gradients. Ties keep the first
    /// (lowest feature index, then lowest threshold) candidate.
    fn best_split(&self, in_node: &[bool], count: usize, grad_sum: f64) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf;
        let parent_score = grad_sum * grad_sum / count as f64;
        let mut best: Option<BestSplit> = None;
        for (feature, order) in self.columns.order.iter().enumerate() {
            let mut left_sum = 0.0f64;
            let mut left_cnt = 0usize;
            let mut prev_value: Option<f64> = None;
            for &i in order {
                if !in_node[i] {
                    continue;
                }
                let value = self.rows[i][feature];
                if let Some(pv) = prev_value {
                    if value > pv
                        && left_cnt >= min_leaf
                        && count - left_cnt >= min_leaf
                    {
                        let right_sum = grad_sum - left_sum;
                        let right_cnt = count - left_cnt;
                        let gain = left_sum * left_sum / left_cnt as f64
                            + right_sum * right_sum / right_cnt as f64
                            - parent_score;
                        if gain > MIN_SPLIT_GAIN
                            && best.as_ref().is_none_or(|b| gain > b.gain)
                        {
                            best = Some(BestSplit {
                                gain,
                                feature,
                                threshold: pv + 0.5 * (value - pv),
                            });
                        }
                    }
                }
                left_sum += self.gradients[i];
                left_cnt += 1;
                prev_value = Some(value);
            }
        }
        best
    }
}

/// Per-round training log-loss, starting with the prior-only loss at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub log_loss: Vec<f64>,
}

/// Trains the ensemble on dense rows and integer labels in `0..n_classes`.
///
/// Requires at least two distinct labels; single-class inputs should be
/// served by frequency prediction instead.
pub fn train_ensemble(
    rows: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    params: &BoostingParams,
) -> Result<(GbdtEnsemble, TrainingSummary)> {
    params.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let feature_dim = rows[0].len();
    if rows.iter().any(|r| r.len() != feature_dim) {
        return Err(Error::Dimension("ragged feature rows".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let distinct = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::InvalidInput(
            "training set has a single class; use frequency routing for this group".into(),
        ));
    }

    let n = rows.len();
    let mut class_counts = vec![0usize; n_classes];
    labels.iter().for_each(|&l| class_counts[l] += 1);
    let initial_scores: Vec<f64> = class_counts
        .iter()
        .map(|&c| {
            if c == 0 {
                LOG_ZERO_PRIOR
            } else {
                (c as f64 / n as f64).ln()
            }
        })
        .collect();

    let columns = SortedColumns::new(rows, feature_dim);
    let mut scores: Vec<Vec<f64>> = vec![initial_scores.clone(); n];
    let mut trees: Vec<Vec<TreeNode>> = Vec::with_capacity(params.rounds);
    let mut log_loss = Vec::with_capacity(params.rounds + 1);

    let loss_of = |scores: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for (s, &label) in scores.iter().zip(labels) {
            let p = softmax(s)[label];
            total -= p.max(1e-300).ln();
        }
        total / n as f64
    };
    log_loss.push(loss_of(&scores));

    for _round in 0..params.rounds {
        let probabilities: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let round_trees: Vec<TreeNode> = par::map_range(n_classes, |class| {
            let mut gradients = Vec::with_capacity(n);
            let mut hessians = Vec::with_capacity(n);
            for (i, p) in probabilities.iter().enumerate() {
                let target = if labels[i] == class { 1.0 } else { 0.0 };
                gradients.push(target - p[class]);
                hessians.push(p[class] * (1.0 - p[class]));
            }
            let fitter = TreeFitter {
                rows,
                columns: &columns,
                gradients: &gradients,
                hessians: &hessians,
                params,
            };
            let mut in_node = vec![true; n];
            fitter.fit(&mut in_node, n, 0)
        });
        for (i, row) in rows.iter().enumerate() {
            for (c, tree) in round_trees.iter().enumerate() {
                scores[i][c] += tree.predict(row);
            }
        }
        let loss = loss_of(&scores);
        debug_assert!(
            loss <= log_loss.last().unwrap() + 1e-9,
            "training loss increased: {} -> {loss}",
            log_loss.last().unwrap()
        );
        log_loss.push(loss);
        trees.push(round_trees);
    }

    Ok((
        GbdtEnsemble {
            n_classes,
            feature_dim,
            initial_scores,
            trees,
            params: *params,
        },
        TrainingSummary { log_loss },
    ))
}
