//! Binned-statistics early stopping.
//!
//! For each stage the partial scores of the training set are bucketed into
//! bins of width λ. Each bin stores the mean μ and population standard
//! deviation σ of `d = g_r - f` (partial minus full score). An example in a
//! known bin stops as positive when `g_r > β + μ + γσ` and as negative when
//! `g_r < β + μ - γσ`; an unseen bin means the rest of the ensemble is
//! evaluated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cascade::{StageCall, StoppingRule};
use crate::ensemble::{full_score, validate_permutation, ScoreMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffSign {
    /// `d = g_r - f`.
    #[default]
    PartialMinusFull,
    /// `d = f - g_r`.
    FullMinusPartial,
}

impl DiffSign {
    fn is_default(&self) -> bool {
        *self == DiffSign::PartialMinusFull
    }

    fn diff(self, partial: f64, full: f64) -> f64 {
        match self {
            DiffSign::PartialMinusFull => partial - full,
            DiffSign::FullMinusPartial => full - partial,
        }
    }

    /// Expected offset of the partial score above the full score.
    fn partial_offset(self, mu: f64) -> f64 {
        match self {
            DiffSign::PartialMinusFull => mu,
            DiffSign::FullMinusPartial => -mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub mu: f64,
    pub sigma: f64,
    pub count: usize,
}

impl BinStats {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n;
        BinStats { mu, sigma: var.sqrt(), count: values.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FanRepr")]
pub struct FanPolicy {
    order: Vec<usize>,
    gamma: f64,
    lambda: f64,
    beta: f64,
    #[serde(default, skip_serializing_if = "DiffSign::is_default")]
    diff_sign: DiffSign,
    /// One map per stage except the last, keyed by bin index.
    stages: Vec<BTreeMap<i64, BinStats>>,
}

#[derive(Deserialize)]
struct FanRepr {
    order: Vec<usize>,
    gamma: f64,
    lambda: f64,
    beta: f64,
    #[serde(default)]
    diff_sign: DiffSign,
    // String keys: integer keys do not survive the buffering of tagged enums.
    stages: Vec<BTreeMap<String, BinStats>>,
}

impl TryFrom<FanRepr> for FanPolicy {
    type Error = Error;

    fn try_from(r: FanRepr) -> Result<Self> {
        let stages = r
            .stages
            .into_iter()
            .map(|bins| {
                bins.into_iter()
                    .map(|(k, v)| {
                        k.parse::<i64>().map(|b| (b, v)).map_err(|_| Error::invalid(format!("bad bin key {k:?}")))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        FanPolicy::from_stages(r.order, r.gamma, r.lambda, r.beta, r.diff_sign, stages)
    }
}

pub fn bin_index(partial: f64, lambda: f64) -> i64 {
    (partial / lambda).floor() as i64
}

fn check_knobs(gamma: f64, lambda: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be finite and > 0, got {lambda}")));
    }
    Ok(())
}

impl FanPolicy {
    /// Fit bin statistics on every example of `sm` along `order`.
    pub fn fit(
        sm: &ScoreMatrix,
        order: &[usize],
        gamma: f64,
        lambda: f64,
        beta: f64,
        diff_sign: DiffSign,
    ) -> Result<Self> {
        check_knobs(gamma, lambda)?;
        validate_permutation(order, sm.n_models())?;
        if !beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        let full: Vec<f64> = sm.rows().map(full_score).collect();
        let mut partial = vec![0.0; sm.n_examples()];
        let mut stages = Vec::with_capacity(order.len().saturating_sub(1));
        for &model in order.iter().take(order.len().saturating_sub(1)) {
            let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
            for (i, g) in partial.iter_mut().enumerate() {
                *g += sm.get(i, model);
                bins.entry(bin_index(*g, lambda)).or_default().push(diff_sign.diff(*g, full[i]));
            }
            stages.push(bins.into_iter().map(|(b, d)| (b, BinStats::from_values(&d))).collect());
        }
        Ok(FanPolicy { order: order.to_vec(), gamma, lambda, beta, diff_sign, stages })
    }

    /// Build from precomputed statistics.
    pub fn from_stages(
        order: Vec<usize>,
        gamma: f64,
        lambda: f64,
        beta: f64,
        diff_sign: DiffSign,
        stages: Vec<BTreeMap<i64, BinStats>>,
    ) -> Result<Self> {
        let p = FanPolicy { order, gamma, lambda, beta, diff_sign, stages };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        check_knobs(self.gamma, self.lambda)?;
        validate_permutation(&self.order, self.order.len())?;
        if self.order.is_empty() {
            return Err(Error::invalid("a cascade needs at least one stage"));
        }
        if !self.beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        if self.stages.len() + 1 != self.order.len() {
            return Err(Error::DimensionMismatch {
                what: "fan stages",
                expected: self.order.len() - 1,
                actual: self.stages.len(),
            });
        }
        Ok(())
    }

    /// Same statistics with a different γ.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_knobs(gamma, self.lambda)?;
        Ok(FanPolicy { gamma, ..self.clone() })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn diff_sign(&self) -> DiffSign {
        self.diff_sign
    }

    pub fn stages(&self) -> &[BTreeMap<i64, BinStats>] {
        &self.stages
    }

    /// `(negative, positive)` thresholds on the partial score for a bin.
    pub fn bin_thresholds(&self, stats: &BinStats) -> (f64, f64) {
        let center = self.beta + self.diff_sign.partial_offset(stats.mu);
        let width = self.gamma * stats.sigma;
        (center - width, center + width)
    }
}

impl StoppingRule for FanPolicy {
    fn order(&self) -> &[usize] {
        &self.order
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn check(&self, stage: usize, partial: f64) -> StageCall {
        let Some(stats) = self.stages[stage].get(&bin_index(partial, self.lambda)) else {
            return StageCall::Exhaust;
        };
        let (lo, hi) = self.bin_thresholds(stats);
        if partial > hi {
            StageCall::Positive
        } else if partial < lo {
            StageCall::Negative
        } else {
            StageCall::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{evaluate_row, StageCall};
    use crate::ensemble::CostVector;

    fn fixture(gamma: f64) -> FanPolicy {
        // Two examples in bin 0 of stage 1 with d = 0.1 and 0.3.
        let sm = ScoreMatrix::from_rows(vec![vec![0.001, -0.1], vec![0.002, -0.3]]).unwrap();
        FanPolicy::fit(&sm, &[0, 1], gamma, DEFAULT_LAMBDA, 0.0, DiffSign::default()).unwrap()
    }

    #[test]
    fn fixture_statistics_and_thresholds() {
        let p = fixture(2.0);
        let stats = p.stages()[0][&0];
        assert_eq!(stats.count, 2);
        assert!((stats.mu - 0.2).abs() < 1e-12);
        assert!((stats.sigma - 0.1).abs() < 1e-12);
        let (lo, hi) = p.bin_thresholds(&stats);
        assert!((hi - 0.4).abs() < 1e-12);
        assert!(lo.abs() < 1e-12);
    }

    #[test]
    fn unseen_bin_exhausts() {
        let p = fixture(2.0);
        assert_eq!(p.check(0, 5.0), StageCall::Exhaust);
        let out = evaluate_row(&p, &[5.0, -6.0], &CostVector::uniform(2));
        assert_eq!((out.stop_stage, out.decision), (2, false));
    }

    #[test]
    fn flipped_sign_mirrors_mean() {
        let sm = ScoreMatrix::from_rows(vec![vec![0.001, -0.1], vec![0.002, -0.3]]).unwrap();
        let p = FanPolicy::fit(&sm, &[0, 1], 2.0, DEFAULT_LAMBDA, 0.0, DiffSign::FullMinusPartial).unwrap();
        let stats = p.stages()[0][&0];
        assert!((stats.mu + 0.2).abs() < 1e-12);
        let (lo, hi) = p.bin_thresholds(&stats);
        assert!((hi - 0.4).abs() < 1e-12 && lo.abs() < 1e-12);
    }

    #[test]
    fn bins_floor_toward_negative_infinity() {
        assert_eq!(bin_index(0.0, 0.01), 0);
        assert_eq!(bin_index(-0.001, 0.01), -1);
        assert_eq!(bin_index(0.025, 0.01), 2);
    }

    #[test]
    fn json_round_trip_sorted_bins() {
        let sm = ScoreMatrix::from_rows(vec![vec![0.5, 0.1], vec![-0.3, 0.2], vec![0.05, -1.0]]).unwrap();
        let p = FanPolicy::fit(&sm, &[1, 0], 1.0, 0.1, 0.0, DiffSign::default()).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert!(!json.contains("diff_sign"));
        assert!(json.find("\"-10\"").unwrap() < json.find("\"1\"").unwrap());
        let back: FanPolicy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_bad_knobs() {
        let sm = ScoreMatrix::from_rows(vec![vec![0.5, 0.1]]).unwrap();
        assert!(FanPolicy::fit(&sm, &[0, 1], -1.0, 0.1, 0.0, DiffSign::default()).is_err());
        assert!(FanPolicy::fit(&sm, &[0, 1], 1.0, 0.0, 0.0, DiffSign::default()).is_err());
        assert!(FanPolicy::fit(&sm, &[0, 0], 1.0, 0.1, 0.0, DiffSign::default()).is_err());
        let bad = r#"{"order":[0,1],"gamma":1.0,"lambda":0.1,"beta":0.0,"stages":[]}"#;
        assert!(serde_json::from_str::<FanPolicy>(bad).is_err());
    }
}
