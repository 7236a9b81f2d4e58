//! Small gradient-boosted tree trainer for binary classification, plus tree
//! inference that exits early according to a stopping rule.
//!
//! Boosting fits depth-limited regression trees to the logistic-loss
//! residuals `y - sigmoid(F)` with exact greedy squared-error splits; a leaf
//! holds the mean residual of its rows. A model predicts positive when
//! `bias + sum_t lr * leaf_t(x) >= beta`.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{StageCall, StoppingRule};
use crate::ensemble::{full_score, ScoreMatrix};
use crate::error::{Error, Result};
use crate::tabular::TabularData;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { leaf: f64 },
}

/// Nodes in breadth-first order; the root is node 0. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { leaf } => return leaf,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[feature] <= threshold { left } else { right }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn validate(&self, n_features: Option<usize>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        for (k, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { leaf } if !leaf.is_finite() => {
                    return Err(Error::invalid(format!("node {k}: leaf value is not finite")));
                }
                Node::Split { feature, threshold, left, right } => {
                    // Children after their parent rules out cycles.
                    if left <= k || right <= k || left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(Error::invalid(format!("node {k}: child index out of range")));
                    }
                    if threshold.is_nan() {
                        return Err(Error::invalid(format!("node {k}: threshold is NaN")));
                    }
                    if n_features.is_some_and(|d| feature >= d) {
                        return Err(Error::invalid(format!("node {k}: feature {feature} out of range")));
                    }
                }
                Node::Leaf { .. } => {}
            }
        }
        Ok(())
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeEnsembleRepr")]
pub struct TreeEnsemble {
    pub bias: f64,
    pub learning_rate: f64,
    pub beta: f64,
    pub trees: Vec<Tree>,
}

#[derive(Deserialize)]
struct TreeEnsembleRepr {
    bias: f64,
    learning_rate: f64,
    beta: f64,
    trees: Vec<Tree>,
}

impl TryFrom<TreeEnsembleRepr> for TreeEnsemble {
    type Error = Error;

    fn try_from(r: TreeEnsembleRepr) -> Result<Self> {
        let model = TreeEnsemble { bias: r.bias, learning_rate: r.learning_rate, beta: r.beta, trees: r.trees };
        model.validate()?;
        Ok(model)
    }
}

impl TreeEnsemble {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be finite and > 0"));
        }
        if !self.bias.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid("bias and beta must be finite"));
        }
        if self.trees.is_empty() {
            return Err(Error::invalid("model has no trees"));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(None).map_err(|e| Error::invalid(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Threshold on the sum of tree contributions, with the bias moved over.
    pub fn matrix_beta(&self) -> f64 {
        self.beta - self.bias
    }

    /// `lr * leaf` for tree `t`: the score-matrix entry.
    #[inline]
    pub fn contribution(&self, t: usize, x: &[f64]) -> f64 {
        self.learning_rate * self.trees[t].leaf_value(x)
    }

    pub fn contributions(&self, x: &[f64]) -> Vec<f64> {
        (0..self.trees.len()).map(|t| self.contribution(t, x)).collect()
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.bias + full_score(&self.contributions(x))
    }

    pub fn classify(&self, x: &[f64]) -> bool {
        full_score(&self.contributions(x)) >= self.matrix_beta()
    }

    pub fn check_features(&self, n_features: usize) -> Result<()> {
        let needed = self.trees.iter().filter_map(Tree::max_feature).max().map_or(0, |f| f + 1);
        if needed > n_features {
            return Err(Error::DimensionMismatch { what: "feature count", expected: needed, actual: n_features });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)? + "\n";
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { n_trees: 100, max_depth: 3, learning_rate: 0.1, subsample: 1.0, seed: 0 }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean logistic loss of the model's raw scores.
pub fn log_loss(model: &TreeEnsemble, data: &TabularData) -> Result<f64> {
    let labels = data.labels().ok_or_else(|| Error::invalid("log loss needs labels"))?;
    let total: f64 = (0..data.n_rows())
        .map(|i| {
            let z = model.raw_score(data.row(i));
            // log(1 + e^-z) for positives, log(1 + e^z) for negatives.
            let m = if labels[i] { -z } else { z };
            m.max(0.0) + (-m.abs()).exp().ln_1p()
        })
        .sum();
    Ok(total / data.n_rows() as f64)
}

/// Boosts `params.n_trees` trees; deterministic for a given seed.
pub fn train_gbt(data: &TabularData, params: &GbtParams) -> Result<TreeEnsemble> {
    let labels = data.labels().ok_or_else(|| Error::invalid("training data needs a label column"))?;
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::invalid("training needs at least two rows"));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::invalid("training data must contain both classes"));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees must be >= 1"));
    }
    if !(params.learning_rate.is_finite() && params.learning_rate > 0.0) {
        return Err(Error::invalid("learning_rate must be finite and > 0"));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::invalid("subsample must be in (0, 1]"));
    }

    let p = n_pos as f64 / n as f64;
    let bias = (p / (1.0 - p)).ln();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut f = vec![bias; n];
    let builder = TreeBuilder::new(data, params.max_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_sample = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let residual: Vec<f64> = (0..n).map(|i| y[i] - sigmoid(f[i])).collect();
        let rows: Vec<usize> = if n_sample == n {
            (0..n).collect()
        } else {
            let mut r = sample(&mut rng, n, n_sample).into_vec();
            r.sort_unstable();
            r
        };
        let tree = builder.build(&rows, &residual);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += params.learning_rate * tree.leaf_value(data.row(i));
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble { bias, learning_rate: params.learning_rate, beta: 0.0, trees })
}

/// Level-wise exact greedy tree growth over presorted feature columns.
struct TreeBuilder<'a> {
    data: &'a TabularData,
    max_depth: usize,
    /// Row indices sorted by each feature's value.
    sorted: Vec<Vec<usize>>,
}

#[derive(Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

const NO_NODE: usize = usize::MAX;

impl<'a> TreeBuilder<'a> {
    fn new(data: &'a TabularData, max_depth: usize) -> Self {
        let sorted = (0..data.n_features())
            .map(|f| {
                let mut idx: Vec<usize> = (0..data.n_rows()).collect();
                idx.sort_by(|&a, &b| data.get(a, f).total_cmp(&data.get(b, f)).then(a.cmp(&b)));
                idx
            })
            .collect();
        TreeBuilder { data, max_depth, sorted }
    }

    fn build(&self, rows: &[usize], target: &[f64]) -> Tree {
        let n = self.data.n_rows();
        let mut node_of = vec![NO_NODE; n];
        for &i in rows {
            node_of[i] = 0;
        }
        let mut nodes = vec![Node::Leaf { leaf: 0.0 }];
        // (node id, sum of targets, row count) for nodes that may still split.
        let mut frontier = vec![(0usize, rows.iter().map(|&i| target[i]).sum::<f64>(), rows.len())];
        for &(k, sum, count) in &frontier {
            nodes[k] = Node::Leaf { leaf: sum / count as f64 };
        }

        for _depth in 0..self.max_depth {
            if frontier.is_empty() {
                break;
            }
            let slot: Vec<usize> = {
                let mut s = vec![NO_NODE; nodes.len()];
                for (pos, &(k, _, _)) in frontier.iter().enumerate() {
                    s[k] = pos;
                }
                s
            };
            let best = self.best_splits(&frontier, &slot, &node_of, target);

            let mut next = Vec::new();
            let mut children = vec![(NO_NODE, NO_NODE); frontier.len()];
            for (pos, &(k, _, _)) in frontier.iter().enumerate() {
                let Some(split) = best[pos] else { continue };
                let left = nodes.len();
                nodes.push(Node::Leaf { leaf: 0.0 });
                nodes.push(Node::Leaf { leaf: 0.0 });
                nodes[k] = Node::Split { feature: split.feature, threshold: split.threshold, left, right: left + 1 };
                children[pos] = (left, left + 1);
            }
            let mut sums = vec![0.0; nodes.len()];
            let mut counts = vec![0usize; nodes.len()];
            for &i in rows {
                let k = node_of[i];
                if k == NO_NODE || slot.get(k).copied().unwrap_or(NO_NODE) == NO_NODE {
                    continue;
                }
                let pos = slot[k];
                let (l, r) = children[pos];
                if l == NO_NODE {
                    node_of[i] = NO_NODE;
                    continue;
                }
                let Node::Split { feature, threshold, .. } = nodes[k] else { unreachable!() };
                let child = if self.data.get(i, feature) <= threshold { l } else { r };
                node_of[i] = child;
                sums[child] += target[i];
                counts[child] += 1;
            }
            for &(l, r) in &children {
                if l == NO_NODE {
                    continue;
                }
                for c in [l, r] {
                    nodes[c] = Node::Leaf { leaf: sums[c] / counts[c] as f64 };
                    next.push((c, sums[c], counts[c]));
                }
            }
            frontier = next;
        }
        Tree { nodes }
    }

    /// Best split per frontier node; `None` when no split reduces the error.
    fn best_splits(
        &self,
        frontier: &[(usize, f64, usize)],
        slot: &[usize],
        node_of: &[usize],
        target: &[f64],
    ) -> Vec<Option<SplitCandidate>> {
        let mut best: Vec<Option<SplitCandidate>> = vec![None; frontier.len()];
        let mut left_sum = vec![0.0; frontier.len()];
        let mut left_count = vec![0usize; frontier.len()];
        let mut last_value = vec![0.0; frontier.len()];
        for (feature, order) in self.sorted.iter().enumerate() {
            left_sum.iter_mut().for_each(|s| *s = 0.0);
            left_count.iter_mut().for_each(|c| *c = 0);
            for &i in order {
                let k = node_of[i];
                if k == NO_NODE || k >= slot.len() || slot[k] == NO_NODE {
                    continue;
                }
                let pos = slot[k];
                let v = self.data.get(i, feature);
                let (_, total, count) = frontier[pos];
                let nl = left_count[pos];
                if nl > 0 && v > last_value[pos] {
                    let sl = left_sum[pos];
                    let nr = count - nl;
                    let sr = total - sl;
                    let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - total * total / count as f64;
                    if gain > 1e-12 && best[pos].is_none_or(|b| gain > b.gain) {
                        best[pos] = Some(SplitCandidate { gain, feature, threshold: split_point(last_value[pos], v) });
                    }
                }
                left_sum[pos] += target[i];
                left_count[pos] += 1;
                last_value[pos] = v;
            }
        }
        best
    }
}

/// Midpoint of `lo < hi`, falling back to `lo` when the floats are adjacent.
fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// `scores[i][t] = lr * leaf_t(x_i)`, labels carried over. Compare row sums
/// against [`TreeEnsemble::matrix_beta`].
pub fn score_matrix_from_trees(model: &TreeEnsemble, data: &TabularData) -> Result<ScoreMatrix> {
    model.check_features(data.n_features())?;
    let t = model.n_trees();
    let mut flat = vec![0.0; data.n_rows() * t];
    flat.par_chunks_mut(t).enumerate().for_each(|(i, row)| {
        let x = data.row(i);
        for (k, v) in row.iter_mut().enumerate() {
            *v = model.contribution(k, x);
        }
    });
    let sm = ScoreMatrix::from_flat(data.n_rows(), t, flat)?;
    match data.labels() {
        Some(l) => sm.with_labels(l.to_vec()),
        None => Ok(sm),
    }
}

/// Decision and 1-based stop stage of a single early-exit walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeOutcome {
    pub decision: bool,
    pub stop_stage: usize,
}

/// Evaluates trees in `rule`'s order and stops as soon as the rule allows.
/// `scratch` must hold one slot per tree; reaching the last stage decides by
/// the full sum in tree-index order, matching the score-matrix evaluator.
pub fn early_exit_predict<R: StoppingRule + ?Sized>(
    model: &TreeEnsemble,
    rule: &R,
    x: &[f64],
    scratch: &mut [f64],
) -> TreeOutcome {
    let order = rule.order();
    let last = order.len() - 1;
    let mut g = 0.0;
    for (stage, &t) in order.iter().enumerate() {
        let c = model.contribution(t, x);
        scratch[t] = c;
        g += c;
        if stage == last {
            break;
        }
        match rule.check(stage, g) {
            StageCall::Continue => {}
            StageCall::Positive => return TreeOutcome { decision: true, stop_stage: stage + 1 },
            StageCall::Negative => return TreeOutcome { decision: false, stop_stage: stage + 1 },
            StageCall::Exhaust => {
                for &rest in &order[stage + 1..] {
                    scratch[rest] = model.contribution(rest, x);
                }
                break;
            }
        }
    }
    TreeOutcome { decision: full_score(scratch) >= rule.beta(), stop_stage: order.len() }
}

fn check_rule<R: StoppingRule + ?Sized>(model: &TreeEnsemble, rule: &R, data: &TabularData) -> Result<()> {
    model.check_features(data.n_features())?;
    if rule.n_models() != model.n_trees() {
        return Err(Error::DimensionMismatch {
            what: "policy stages vs trees",
            expected: model.n_trees(),
            actual: rule.n_models(),
        });
    }
    Ok(())
}

pub fn early_exit_all<R: StoppingRule + Sync + ?Sized>(
    model: &TreeEnsemble,
    rule: &R,
    data: &TabularData,
) -> Result<Vec<TreeOutcome>> {
    check_rule(model, rule, data)?;
    Ok((0..data.n_rows())
        .into_par_iter()
        .map_init(|| vec![0.0; model.n_trees()], |scratch, i| early_exit_predict(model, rule, data.row(i), scratch))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingReport {
    /// Mean over runs of the per-example wall time, in microseconds.
    pub mean_us: f64,
    pub std_us: f64,
    pub mean_models: f64,
    pub runs: usize,
}

/// Times early-exit inference over all rows, `runs` times, on the calling
/// thread only.
pub fn timed_cascade_inference<R: StoppingRule + ?Sized>(
    model: &TreeEnsemble,
    rule: &R,
    data: &TabularData,
    runs: usize,
) -> Result<TimingReport> {
    if runs == 0 {
        return Err(Error::invalid("runs must be >= 1"));
    }
    check_rule(model, rule, data)?;
    let n = data.n_rows();
    let mut scratch = vec![0.0; model.n_trees()];
    let mut per_example_us = Vec::with_capacity(runs);
    let mut stages = 0usize;
    for run in 0..runs {
        let start = Instant::now();
        let mut run_stages = 0usize;
        for i in 0..n {
            let out = early_exit_predict(model, rule, black_box(data.row(i)), &mut scratch);
            run_stages += black_box(out).stop_stage;
        }
        per_example_us.push(start.elapsed().as_secs_f64() * 1e6 / n as f64);
        if run == 0 {
            stages = run_stages;
        }
    }
    let mean = per_example_us.iter().sum::<f64>() / runs as f64;
    let var = per_example_us.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / runs as f64;
    Ok(TimingReport { mean_us: mean, std_us: var.sqrt(), mean_models: stages as f64 / n as f64, runs })
}
