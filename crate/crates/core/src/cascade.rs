//! Threshold cascades and early-stopping evaluation.
//!
//! A cascade evaluates base models in a fixed order, accumulating the partial
//! score `g_r`. After stage `r < T` an example stops as positive when
//! `g_r > eps_pos[r]`, as negative when `g_r < eps_neg[r]`, and continues
//! otherwise. Boundary values stay uncertain. The last stage always decides by
//! the full score against β, so stage-`T` thresholds are stored as ±∞.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{full_score, validate_permutation, CostVector, FullReference, ScoreMatrix};
use crate::error::{Error, Result};

/// Verdict of a stopping rule after one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageCall {
    Positive,
    Negative,
    Continue,
    /// Stop consulting the rule and evaluate every remaining model.
    Exhaust,
}

/// Anything that walks a fixed model order and may stop early.
pub trait StoppingRule {
    fn order(&self) -> &[usize];

    fn beta(&self) -> f64;

    /// Called after stage `stage` (0-based) for every stage but the last.
    fn check(&self, stage: usize, partial: f64) -> StageCall;

    fn n_models(&self) -> usize {
        self.order().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadePolicy {
    order: Vec<usize>,
    eps_neg: Vec<f64>,
    eps_pos: Vec<f64>,
    beta: f64,
}

impl CascadePolicy {
    pub fn new(order: Vec<usize>, eps_neg: Vec<f64>, eps_pos: Vec<f64>, beta: f64) -> Result<Self> {
        let t = order.len();
        validate_permutation(&order, t)?;
        if t == 0 {
            return Err(Error::invalid("a cascade needs at least one stage"));
        }
        for (what, v) in [("eps_neg", &eps_neg), ("eps_pos", &eps_pos)] {
            if v.len() != t {
                return Err(Error::DimensionMismatch { what, expected: t, actual: v.len() });
            }
        }
        if !beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        for (r, (&lo, &hi)) in eps_neg.iter().zip(&eps_pos).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::invalid(format!("stage {r}: NaN threshold")));
            }
            if lo > hi {
                return Err(Error::invalid(format!("stage {r}: eps_neg {lo} exceeds eps_pos {hi}")));
            }
        }
        Ok(CascadePolicy { order, eps_neg, eps_pos, beta })
    }

    /// Full evaluation in the given order.
    pub fn no_early_stop(order: Vec<usize>, beta: f64) -> Result<Self> {
        let t = order.len();
        Self::new(order, vec![f64::NEG_INFINITY; t], vec![f64::INFINITY; t], beta)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eps_neg(&self) -> &[f64] {
        &self.eps_neg
    }

    pub fn eps_pos(&self) -> &[f64] {
        &self.eps_pos
    }

    /// Same policy with one stage's thresholds replaced.
    pub fn with_stage_thresholds(&self, stage: usize, eps_neg: f64, eps_pos: f64) -> Result<Self> {
        let mut lo = self.eps_neg.clone();
        let mut hi = self.eps_pos.clone();
        lo[stage] = eps_neg;
        hi[stage] = eps_pos;
        Self::new(self.order.clone(), lo, hi, self.beta)
    }
}

impl StoppingRule for CascadePolicy {
    fn order(&self) -> &[usize] {
        &self.order
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    fn check(&self, stage: usize, partial: f64) -> StageCall {
        if partial > self.eps_pos[stage] {
            StageCall::Positive
        } else if partial < self.eps_neg[stage] {
            StageCall::Negative
        } else {
            StageCall::Continue
        }
    }
}

/// f64 that serializes ±∞ as the strings `"+inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ExtReal(pub f64);

impl Serialize for ExtReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            v if v == f64::INFINITY => s.serialize_str("+inf"),
            v if v == f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtReal(v)),
            Raw::Str(s) => match s.as_str() {
                "+inf" | "inf" => Ok(ExtReal(f64::INFINITY)),
                "-inf" => Ok(ExtReal(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("bad threshold `{other}`"))),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct CascadeRepr {
    order: Vec<usize>,
    eps_neg: Vec<ExtReal>,
    eps_pos: Vec<ExtReal>,
    beta: f64,
}

impl From<CascadePolicy> for CascadeRepr {
    fn from(p: CascadePolicy) -> Self {
        CascadeRepr {
            order: p.order,
            eps_neg: p.eps_neg.into_iter().map(ExtReal).collect(),
            eps_pos: p.eps_pos.into_iter().map(ExtReal).collect(),
            beta: p.beta,
        }
    }
}

impl TryFrom<CascadeRepr> for CascadePolicy {
    type Error = Error;

    fn try_from(r: CascadeRepr) -> Result<Self> {
        CascadePolicy::new(
            r.order,
            r.eps_neg.into_iter().map(|e| e.0).collect(),
            r.eps_pos.into_iter().map(|e| e.0).collect(),
            r.beta,
        )
    }
}

impl Serialize for CascadePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CascadeRepr::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CascadePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CascadeRepr::deserialize(d)?;
        CascadePolicy::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub decision: bool,
    /// 1-based index of the stage at which evaluation stopped.
    pub stop_stage: usize,
    pub partial_score: f64,
    pub cost_paid: f64,
}

/// Walk `row` through `rule`. The final decision uses the row sum in
/// model-index order, which is exactly the full-reference score.
pub fn evaluate_row<R: StoppingRule + ?Sized>(rule: &R, row: &[f64], costs: &CostVector) -> EvalOutcome {
    let order = rule.order();
    let last = order.len() - 1;
    let mut g = 0.0;
    let mut cost = 0.0;
    for (stage, &t) in order.iter().enumerate() {
        g += row[t];
        cost += costs[t];
        if stage == last {
            break;
        }
        match rule.check(stage, g) {
            StageCall::Continue => {}
            call @ (StageCall::Positive | StageCall::Negative) => {
                return EvalOutcome {
                    decision: call == StageCall::Positive,
                    stop_stage: stage + 1,
                    partial_score: g,
                    cost_paid: cost,
                }
            }
            StageCall::Exhaust => {
                for &rest in &order[stage + 1..] {
                    g += row[rest];
                    cost += costs[rest];
                }
                break;
            }
        }
    }
    EvalOutcome { decision: full_score(row) >= rule.beta(), stop_stage: order.len(), partial_score: g, cost_paid: cost }
}

pub fn evaluate_example(policy: &CascadePolicy, row: &[f64], costs: &CostVector) -> EvalOutcome {
    evaluate_row(policy, row, costs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_cost: f64,
    pub mean_models: f64,
    /// Fraction of examples whose decision differs from the full ensemble.
    pub pct_diff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// `stop_histogram[r]` counts examples that stopped after `r + 1` models.
    pub stop_histogram: Vec<usize>,
    #[serde(skip)]
    pub n_examples: usize,
    #[serde(skip)]
    pub disagreements: usize,
}

impl Metrics {
    pub fn from_outcomes(
        outcomes: &[EvalOutcome],
        reference: &FullReference,
        labels: Option<&[bool]>,
        n_models: usize,
    ) -> Self {
        let n = outcomes.len();
        let mut stop_histogram = vec![0usize; n_models];
        let mut cost = 0.0;
        let mut models = 0usize;
        let mut disagreements = 0usize;
        let mut correct = 0usize;
        for (i, o) in outcomes.iter().enumerate() {
            stop_histogram[o.stop_stage - 1] += 1;
            cost += o.cost_paid;
            models += o.stop_stage;
            disagreements += usize::from(o.decision != reference.full_decisions[i]);
            if let Some(labels) = labels {
                correct += usize::from(o.decision == labels[i]);
            }
        }
        let nf = n as f64;
        Metrics {
            mean_cost: cost / nf,
            mean_models: models as f64 / nf,
            pct_diff: disagreements as f64 / nf,
            accuracy: labels.map(|_| correct as f64 / nf),
            stop_histogram,
            n_examples: n,
            disagreements,
        }
    }
}

fn check_dimensions<R: StoppingRule + ?Sized>(rule: &R, sm: &ScoreMatrix, costs: &CostVector) -> Result<()> {
    if rule.n_models() != sm.n_models() {
        return Err(Error::DimensionMismatch {
            what: "policy stages vs score columns",
            expected: sm.n_models(),
            actual: rule.n_models(),
        });
    }
    costs.check_models(sm.n_models())
}

pub fn evaluate_outcomes<R: StoppingRule + Sync + ?Sized>(
    rule: &R,
    sm: &ScoreMatrix,
    costs: &CostVector,
) -> Result<Vec<EvalOutcome>> {
    check_dimensions(rule, sm, costs)?;
    Ok((0..sm.n_examples()).into_par_iter().map(|i| evaluate_row(rule, sm.row(i), costs)).collect())
}

/// Aggregate cost and fidelity of `rule` over every row of `sm`.
pub fn evaluate_matrix<R: StoppingRule + Sync + ?Sized>(
    rule: &R,
    sm: &ScoreMatrix,
    costs: &CostVector,
    reference: &FullReference,
) -> Result<Metrics> {
    if reference.full_decisions.len() != sm.n_examples() {
        return Err(Error::DimensionMismatch {
            what: "reference decisions",
            expected: sm.n_examples(),
            actual: reference.full_decisions.len(),
        });
    }
    if reference.beta != rule.beta() {
        return Err(Error::invalid(format!(
            "policy beta {} differs from reference beta {}",
            rule.beta(),
            reference.beta
        )));
    }
    let outcomes = evaluate_outcomes(rule, sm, costs)?;
    Ok(Metrics::from_outcomes(&outcomes, reference, sm.labels(), sm.n_models()))
}

/// Counts for stage `r` (1-based): examples of `C_{r-1}` classified positive,
/// negative, and still uncertain (`|C_r|`). `r = 0` gives `C_0`, the whole set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePartition {
    pub positive: usize,
    pub negative: usize,
    pub uncertain: usize,
}

pub fn stage_partition<R: StoppingRule + Sync + ?Sized>(
    rule: &R,
    sm: &ScoreMatrix,
    costs: &CostVector,
    r: usize,
) -> Result<StagePartition> {
    let t = rule.n_models();
    if r > t {
        return Err(Error::invalid(format!("stage {r} out of range 0..={t}")));
    }
    let outcomes = evaluate_outcomes(rule, sm, costs)?;
    let mut part = StagePartition { positive: 0, negative: 0, uncertain: 0 };
    for o in &outcomes {
        if o.stop_stage > r {
            part.uncertain += 1;
        } else if o.stop_stage == r {
            if o.decision {
                part.positive += 1;
            } else {
                part.negative += 1;
            }
        }
    }
    Ok(part)
}

/// Membership of `C_r` for every `r` in `0..=T`, derived from stop stages.
pub fn uncertain_sets(outcomes: &[EvalOutcome], n_models: usize) -> Vec<Vec<bool>> {
    (0..=n_models).map(|r| outcomes.iter().map(|o| o.stop_stage > r).collect()).collect()
}
