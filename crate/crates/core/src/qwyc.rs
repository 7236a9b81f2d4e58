//! Joint optimization of the model order and per-stage early-stopping
//! thresholds under a budget on disagreements with the full ensemble.
//!
//! The budget is `floor(alpha * N)` disagreements in total, shared by all
//! stages: each stage spends only what earlier stages left over, so every
//! prefix of the cascade respects the constraint on the training set.
//!
//! Per stage, the number of early-negative disagreements is a step function of
//! `eps_neg` that only changes at the partial scores of uncertain examples (and
//! likewise for `eps_pos`), so both thresholds are found by binary search over
//! the sorted distinct partial scores.

use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::CascadePolicy;
use crate::ensemble::{
    full_reference, validate_permutation, CostVector, DecisionConfig, FullReference, ScoreMatrix, StoppingMode,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetState {
    pub total_budget: usize,
    pub committed: usize,
}

impl BudgetState {
    pub fn new(alpha: f64, n_examples: usize) -> Self {
        BudgetState { total_budget: disagreement_budget(alpha, n_examples), committed: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.total_budget - self.committed
    }
}

/// `floor(alpha * n)`, robust to products like `0.29 * 100 = 28.999999999999996`.
pub fn disagreement_budget(alpha: f64, n_examples: usize) -> usize {
    let x = alpha * n_examples as f64;
    let b = (x * (1.0 + 1e-12) + 1e-12).floor();
    (b.max(0.0) as usize).min(n_examples)
}

/// Thresholds chosen for one stage and what they did to the uncertain set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageThresholds {
    pub eps_neg: f64,
    pub eps_pos: f64,
    /// Cumulative disagreements after this stage.
    pub committed: usize,
    pub newly_classified: usize,
    pub rejected: usize,
    pub accepted: usize,
}

impl StageThresholds {
    fn open(committed: usize) -> Self {
        StageThresholds {
            eps_neg: f64::NEG_INFINITY,
            eps_pos: f64::INFINITY,
            committed,
            newly_classified: 0,
            rejected: 0,
            accepted: 0,
        }
    }
}

/// Smallest "nice" value strictly above `v`: `v + 1`, or the next float when
/// `v` is too large for `+1` to register.
pub fn step_above(v: f64) -> f64 {
    let s = v + 1.0;
    if s > v {
        s
    } else {
        v.next_up()
    }
}

pub fn step_below(v: f64) -> f64 {
    let s = v - 1.0;
    if s < v {
        s
    } else {
        v.next_down()
    }
}

/// Thresholds for one stage given the uncertain examples' partial scores
/// (including the candidate model) paired with their full-ensemble decisions.
///
/// `eps_neg` is the largest candidate whose early negatives stay within the
/// remaining budget; `eps_pos` is then the smallest candidate `>= eps_neg`
/// whose early positives fit in what is left. Candidates are the distinct
/// partial scores plus the reject-all/accept-all sentinels, so the group
/// sitting exactly at `eps_neg` can never be accepted. A threshold that
/// classifies nothing is reported as the matching infinity. `points` is
/// reordered.
pub fn stage_thresholds(points: &mut [(f64, bool)], budget: BudgetState, mode: StoppingMode) -> StageThresholds {
    if points.is_empty() {
        return StageThresholds::open(budget.committed);
    }
    points.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    // Distinct partial scores with per-value counts of full positives/negatives.
    let mut values: Vec<f64> = Vec::new();
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for &(g, full_positive) in points.iter() {
        if values.last() != Some(&g) {
            values.push(g);
            pos.push(0);
            neg.push(0);
        }
        let last = values.len() - 1;
        if full_positive {
            pos[last] += 1;
        } else {
            neg[last] += 1;
        }
    }
    let m = values.len();

    // eps_neg = values[j] rejects groups 0..j; j = m is the reject-all sentinel.
    let mut below_pos = Vec::with_capacity(m + 1);
    let mut below_all = Vec::with_capacity(m + 1);
    below_pos.push(0usize);
    below_all.push(0usize);
    for k in 0..m {
        below_pos.push(below_pos[k] + pos[k]);
        below_all.push(below_all[k] + pos[k] + neg[k]);
    }
    let remaining = budget.remaining();
    let j = below_pos.partition_point(|&p| p <= remaining) - 1;
    let eps_neg = match j {
        0 => f64::NEG_INFINITY,
        j if j == m => step_above(values[m - 1]),
        j => values[j],
    };
    let rejected = below_all[j];
    let mut committed = budget.committed + below_pos[j];

    let (eps_pos, accepted) = match mode {
        StoppingMode::FilterNegative => (f64::INFINITY, 0),
        StoppingMode::TwoSided => {
            // Accepting groups a..m: a = 0 is accept-all, a = m accepts nothing.
            let mut from_neg = vec![0usize; m + 1];
            let mut from_all = vec![0usize; m + 1];
            for k in (0..m).rev() {
                from_neg[k] = from_neg[k + 1] + neg[k];
                from_all[k] = from_all[k + 1] + pos[k] + neg[k];
            }
            let left = budget.total_budget - committed;
            let a_min = match j {
                0 => 0,
                j if j == m => m,
                j => j + 1,
            };
            let a = from_neg.partition_point(|&x| x > left).max(a_min);
            let eps_pos = match a {
                0 => step_below(values[0]),
                a if a == m => f64::INFINITY,
                a => values[a - 1],
            };
            committed += from_neg[a];
            (eps_pos, from_all[a])
        }
    };

    StageThresholds { eps_neg, eps_pos, committed, newly_classified: rejected + accepted, rejected, accepted }
}

/// `c * |C_{r-1}| / n_r`: stage cost paid by every uncertain example per
/// example that the stage lets stop. Infinite when nothing stops.
pub fn evaluation_time_ratio(cost: f64, size_c_prev: usize, n_newly: usize) -> f64 {
    if n_newly == 0 {
        f64::INFINITY
    } else {
        cost * size_c_prev as f64 / n_newly as f64
    }
}

/// The first stages of a cascade, already fixed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StagePrefix {
    pub order: Vec<usize>,
    pub eps_neg: Vec<f64>,
    pub eps_pos: Vec<f64>,
}

/// Thresholds for `model` placed right after `prefix`, with the prefix's own
/// disagreements already charged to `budget`.
pub fn optimize_stage_thresholds(
    sm: &ScoreMatrix,
    reference: &FullReference,
    prefix: &StagePrefix,
    model: usize,
    budget: BudgetState,
    mode: StoppingMode,
) -> Result<StageThresholds> {
    if model >= sm.n_models() {
        return Err(Error::invalid(format!("model {model} out of range")));
    }
    if prefix.order.contains(&model) {
        return Err(Error::invalid(format!("model {model} already placed in the prefix")));
    }
    if budget.committed > budget.total_budget {
        return Err(Error::invalid("committed disagreements exceed the budget"));
    }
    let mut search = Search::new(sm, reference, budget, mode);
    for (s, &t) in prefix.order.iter().enumerate() {
        search.commit(t, prefix.eps_neg[s], prefix.eps_pos[s]);
    }
    search.budget = budget;
    let mut buf = Vec::new();
    Ok(search.candidate(model, &mut buf))
}

/// Greedy bookkeeping shared by the ordered and fixed-order optimizers.
struct Search<'a> {
    sm: &'a ScoreMatrix,
    reference: &'a FullReference,
    partial: Vec<f64>,
    uncertain: Vec<usize>,
    budget: BudgetState,
    mode: StoppingMode,
}

impl<'a> Search<'a> {
    fn new(sm: &'a ScoreMatrix, reference: &'a FullReference, budget: BudgetState, mode: StoppingMode) -> Self {
        Search {
            sm,
            reference,
            partial: vec![0.0; sm.n_examples()],
            uncertain: (0..sm.n_examples()).collect(),
            budget,
            mode,
        }
    }

    fn candidate(&self, model: usize, buf: &mut Vec<(f64, bool)>) -> StageThresholds {
        buf.clear();
        buf.extend(
            self.uncertain.iter().map(|&i| (self.partial[i] + self.sm.get(i, model), self.reference.full_decisions[i])),
        );
        stage_thresholds(buf, self.budget, self.mode)
    }

    /// Apply a stage: advance partial scores and drop examples that stop.
    /// Disagreements are recounted here rather than trusted from the caller.
    fn commit(&mut self, model: usize, eps_neg: f64, eps_pos: f64) {
        let sm = self.sm;
        let full = &self.reference.full_decisions;
        let partial = &mut self.partial;
        let mut committed = self.budget.committed;
        self.uncertain.retain(|&i| {
            let g = partial[i] + sm.get(i, model);
            partial[i] = g;
            if g > eps_pos {
                committed += usize::from(!full[i]);
                false
            } else if g < eps_neg {
                committed += usize::from(full[i]);
                false
            } else {
                true
            }
        });
        self.budget.committed = committed;
    }
}

/// Per-stage record of the greedy scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    /// `(model, J)` for every candidate, in scan order.
    pub candidates: Vec<(usize, f64)>,
    pub chosen: usize,
    pub chosen_ratio: f64,
    pub uncertain_before: usize,
    pub thresholds_newly: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OptimizationTrace {
    pub stages: Vec<StageTrace>,
    pub disagreements: usize,
    pub total_budget: usize,
}

fn check_inputs(sm: &ScoreMatrix, costs: &CostVector, config: &DecisionConfig) -> Result<()> {
    config.validate()?;
    costs.check_models(sm.n_models())
}

/// Greedy joint ordering: at each stage, try every remaining model, give it
/// its optimal thresholds, and keep the one with the smallest evaluation-time
/// ratio. Ties keep the earliest-scanned candidate.
pub fn optimize_order(sm: &ScoreMatrix, costs: &CostVector, config: &DecisionConfig) -> Result<CascadePolicy> {
    optimize_order_traced(sm, costs, config).map(|(p, _)| p)
}

pub fn optimize_order_traced(
    sm: &ScoreMatrix,
    costs: &CostVector,
    config: &DecisionConfig,
) -> Result<(CascadePolicy, OptimizationTrace)> {
    check_inputs(sm, costs, config)?;
    let t = sm.n_models();
    let reference = full_reference(sm, config.beta);
    let mut search = Search::new(sm, &reference, BudgetState::new(config.alpha, sm.n_examples()), config.mode);
    let mut perm: Vec<usize> = (0..t).collect();
    let mut eps_neg = vec![f64::NEG_INFINITY; t];
    let mut eps_pos = vec![f64::INFINITY; t];
    let mut trace = OptimizationTrace { total_budget: search.budget.total_budget, ..Default::default() };

    for r in 0..t.saturating_sub(1) {
        let scored: Vec<(usize, StageThresholds)> =
            perm[r..].par_iter().map_init(Vec::new, |buf, &model| (model, search.candidate(model, buf))).collect();
        let size_c = search.uncertain.len();

        let mut best_k = r;
        let mut best_j = f64::INFINITY;
        let mut best = StageThresholds::open(search.budget.committed);
        let mut candidates = Vec::with_capacity(scored.len());
        for (offset, (model, th)) in scored.iter().enumerate() {
            let j = evaluation_time_ratio(costs[*model], size_c, th.newly_classified);
            candidates.push((*model, j));
            if j < best_j {
                best_j = j;
                best_k = r + offset;
                best = *th;
            }
        }
        perm.swap(r, best_k);
        let model = perm[r];
        eps_neg[r] = best.eps_neg;
        eps_pos[r] = best.eps_pos;
        search.commit(model, best.eps_neg, best.eps_pos);
        debug_assert_eq!(search.budget.committed, best.committed);
        trace.stages.push(StageTrace {
            candidates,
            chosen: model,
            chosen_ratio: best_j,
            uncertain_before: size_c,
            thresholds_newly: best.newly_classified,
        });
    }
    trace.disagreements = search.budget.committed;
    let policy = CascadePolicy::new(perm, eps_neg, eps_pos, config.beta)?;
    Ok((policy, trace))
}

/// Per-stage thresholds for a pre-selected order.
pub fn thresholds_for_fixed_order(
    sm: &ScoreMatrix,
    costs: &CostVector,
    config: &DecisionConfig,
    order: &[usize],
) -> Result<CascadePolicy> {
    check_inputs(sm, costs, config)?;
    let t = sm.n_models();
    validate_permutation(order, t)?;
    let reference = full_reference(sm, config.beta);
    let mut search = Search::new(sm, &reference, BudgetState::new(config.alpha, sm.n_examples()), config.mode);
    let mut eps_neg = vec![f64::NEG_INFINITY; t];
    let mut eps_pos = vec![f64::INFINITY; t];
    let mut buf = Vec::new();
    for r in 0..t.saturating_sub(1) {
        let th = search.candidate(order[r], &mut buf);
        eps_neg[r] = th.eps_neg;
        eps_pos[r] = th.eps_pos;
        search.commit(order[r], th.eps_neg, th.eps_pos);
    }
    CascadePolicy::new(order.to_vec(), eps_neg, eps_pos, config.beta)
}
