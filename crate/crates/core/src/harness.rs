//! Building blocks for the command-line tool: policy construction from a
//! method/order choice, knob sweeps, train/test splitting and report
//! formatting.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::{evaluate_matrix, Metrics, StoppingRule};
use crate::ensemble::{fmt_f64, full_reference, ScoreFile, StoppingMode};
use crate::error::{Error, Result};
use crate::fan::{DiffSign, FanPolicy, DEFAULT_LAMBDA};
use crate::orderings::{
    default_mse_target, greedy_mse_order, identity_order, individual_mse_order, mse_targets, random_order, MseTarget,
};
use crate::policy::Policy;
use crate::qwyc::{optimize_order, thresholds_for_fixed_order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Greedy joint ordering and thresholds.
    QwycStar,
    /// Pre-selected order with per-stage thresholds.
    FixedOrderQwyc,
    /// Pre-selected order with binned statistics.
    FixedOrderFan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderSpec {
    Training,
    Random { seed: u64 },
    IndividualMse(Option<MseTarget>),
    GreedyMse(Option<MseTarget>),
}

impl OrderSpec {
    pub fn resolve(&self, train: &ScoreFile) -> Result<Vec<usize>> {
        let sm = &train.scores;
        let targets = |t: Option<MseTarget>| mse_targets(sm, t.unwrap_or_else(|| default_mse_target(sm)));
        match *self {
            OrderSpec::Training => Ok(identity_order(sm.n_models())),
            OrderSpec::Random { seed } => Ok(random_order(sm.n_models(), seed)),
            OrderSpec::IndividualMse(t) => individual_mse_order(sm, &targets(t)?),
            OrderSpec::GreedyMse(t) => greedy_mse_order(sm, &targets(t)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySpec {
    pub method: Method,
    pub order: OrderSpec,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub mode: StoppingMode,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            method: Method::QwycStar,
            order: OrderSpec::Training,
            alpha: 0.0,
            gamma: 1.0,
            lambda: DEFAULT_LAMBDA,
            mode: StoppingMode::TwoSided,
        }
    }
}

/// Fits a policy on the training split.
pub fn build_policy(train: &ScoreFile, spec: &PolicySpec) -> Result<Policy> {
    let config = train.config(spec.alpha, spec.mode)?;
    match spec.method {
        Method::QwycStar => Ok(optimize_order(&train.scores, &train.costs, &config)?.into()),
        Method::FixedOrderQwyc => {
            let order = spec.order.resolve(train)?;
            Ok(thresholds_for_fixed_order(&train.scores, &train.costs, &config, &order)?.into())
        }
        Method::FixedOrderFan => {
            let order = spec.order.resolve(train)?;
            Ok(FanPolicy::fit(&train.scores, &order, spec.gamma, spec.lambda, train.beta, DiffSign::default())?.into())
        }
    }
}

/// Metrics of `rule` on `data`, measured against the file's own β.
pub fn evaluate_on<R: StoppingRule + Sync + ?Sized>(rule: &R, data: &ScoreFile) -> Result<Metrics> {
    evaluate_matrix(rule, &data.scores, &data.costs, &data.reference())
}

/// Like [`evaluate_on`] but judged against the policy's β; for files
/// without a sidecar.
pub fn evaluate_with_policy_beta<R: StoppingRule + Sync + ?Sized>(rule: &R, data: &ScoreFile) -> Result<Metrics> {
    let reference = full_reference(&data.scores, rule.beta());
    evaluate_matrix(rule, &data.scores, &data.costs, &reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    Alpha,
    Gamma,
    Lambda,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::Alpha => "alpha",
            Knob::Gamma => "gamma",
            Knob::Lambda => "lambda",
        }
    }

    fn check(self, method: Method, v: f64) -> Result<()> {
        let applies = match self {
            Knob::Alpha => method != Method::FixedOrderFan,
            Knob::Gamma | Knob::Lambda => method == Method::FixedOrderFan,
        };
        if !applies {
            return Err(Error::invalid(format!("knob {} does not apply to {method:?}", self.name())));
        }
        let ok = match self {
            Knob::Alpha => (0.0..=1.0).contains(&v),
            Knob::Gamma | Knob::Lambda => v.is_finite() && v > 0.0,
        };
        if !ok {
            return Err(Error::invalid(format!("{} = {v} is out of range", self.name())));
        }
        Ok(())
    }

    fn apply(self, spec: &PolicySpec, v: f64) -> PolicySpec {
        let mut s = *spec;
        match self {
            Knob::Alpha => s.alpha = v,
            Knob::Gamma => s.gamma = v,
            Knob::Lambda => s.lambda = v,
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub train: Metrics,
    pub test: Metrics,
}

/// One policy per knob value, fitted on `train` and scored on both splits.
/// Rows come back sorted by knob value.
pub fn sweep(
    train: &ScoreFile,
    test: &ScoreFile,
    spec: &PolicySpec,
    knob: Knob,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one knob value"));
    }
    for &v in values {
        knob.check(spec.method, v)?;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .par_iter()
        .map(|&v| {
            let policy = build_policy(train, &knob.apply(spec, v))?;
            Ok(SweepRow { value: v, train: evaluate_on(&policy, train)?, test: evaluate_on(&policy, test)? })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn sweep_csv(knob: Knob, rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "knob,value,train_mean_models,train_mean_cost,train_pct_diff,train_accuracy,\
         test_mean_models,test_mean_cost,test_pct_diff,test_accuracy\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            knob.name(),
            fmt_f64(r.value),
            fmt_f64(r.train.mean_models),
            fmt_f64(r.train.mean_cost),
            fmt_f64(r.train.pct_diff),
            opt(r.train.accuracy),
            fmt_f64(r.test.mean_models),
            fmt_f64(r.test.mean_cost),
            fmt_f64(r.test.pct_diff),
            opt(r.test.accuracy),
        );
    }
    out
}

pub fn histogram_csv(metrics: &Metrics) -> String {
    let mut out = String::from("models_evaluated,count\n");
    for (r, c) in metrics.stop_histogram.iter().enumerate() {
        let _ = writeln!(out, "{},{c}", r + 1);
    }
    out
}

pub fn metrics_json(metrics: &Metrics) -> String {
    serde_json::to_string_pretty(metrics).expect("metrics always serialize") + "\n"
}

/// Seeded shuffle of `0..n`, cut at `round(train_frac * n)`.
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid("train fraction must be in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_frac * n as f64).round() as usize;
    let test = idx.split_off(cut);
    Ok((idx, test))
}

/// Splits the data lines of a CSV (header kept on both sides).
pub fn split_csv_text(text: &str, train_frac: f64, seed: u64) -> Result<(String, String)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() < 2 {
        return Err(Error::invalid("need at least two data rows to split"));
    }
    let (train, test) = split_indices(rows.len(), train_frac, seed)?;
    let join = |idx: &[usize]| {
        let mut s = format!("{header}\n");
        for &i in idx {
            s.push_str(rows[i]);
            s.push('\n');
        }
        s
    };
    Ok((join(&train), join(&test)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub name: String,
    pub pct_diff: f64,
    pub mean_models: f64,
    pub mean_us: f64,
    pub std_us: f64,
}

/// Aligned table: algorithm, test % diff, mean models, mean µs ± relative
/// std, and speed-up over the first row.
pub fn timing_table(rows: &[TimingRow]) -> String {
    let base = rows.first().map_or(f64::NAN, |r| r.mean_us);
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("Algorithm".len());
    let mut out = format!(
        "{:<width$} | {:>11} | {:>23} | {:>18} | {:>8}\n",
        "Algorithm", "Test % Diff", "Test Mean # Base Models", "Test Mean µs ± %", "Speed-up"
    );
    let _ = writeln!(out, "{}", "-".repeat(out.chars().count() - 1));
    for r in rows {
        let rel = if r.mean_us > 0.0 { 100.0 * r.std_us / r.mean_us } else { 0.0 };
        let _ = writeln!(
            out,
            "{:<width$} | {:>11.2} | {:>23.2} | {:>18} | {:>7.2}x",
            r.name,
            100.0 * r.pct_diff,
            r.mean_models,
            format!("{:.3} ± {:.1}%", r.mean_us, rel),
            base / r.mean_us,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::CostVector;
    use crate::oracle::worked_example;

    fn worked_example_file() -> ScoreFile {
        ScoreFile { scores: worked_example(), costs: CostVector::uniform(3), beta: 0.0 }
    }

    #[test]
    fn qwyc_star_on_worked_example() {
        let p = build_policy(&worked_example_file(), &PolicySpec::default()).unwrap();
        let m = evaluate_on(&p, &worked_example_file()).unwrap();
        assert_eq!(m.mean_cost, 1.75);
        assert_eq!(m.stop_histogram, vec![4, 2, 2]);
    }

    #[test]
    fn fan_method_builds_fan_policy() {
        let spec = PolicySpec { method: Method::FixedOrderFan, ..Default::default() };
        let p = build_policy(&worked_example_file(), &spec).unwrap();
        assert!(matches!(p, Policy::Fan(ref f) if f.lambda() == DEFAULT_LAMBDA));
    }

    #[test]
    fn bad_alpha_is_rejected() {
        let spec = PolicySpec { alpha: 1.5, ..Default::default() };
        assert!(build_policy(&worked_example_file(), &spec).unwrap_err().is_validation());
    }

    #[test]
    fn sweep_rows_sorted_and_constrained() {
        let f = worked_example_file();
        let rows = sweep(&f, &f, &PolicySpec::default(), Knob::Alpha, &[0.02, 0.0, 0.01, 0.005]).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.0, 0.005, 0.01, 0.02]);
        for r in &rows {
            assert!(r.train.disagreements as f64 <= (r.value * 8.0).floor());
        }
        let csv = sweep_csv(Knob::Alpha, &rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("alpha,0.0,"));
    }

    #[test]
    fn sweep_validation() {
        let f = worked_example_file();
        assert!(sweep(&f, &f, &PolicySpec::default(), Knob::Alpha, &[]).is_err());
        assert!(sweep(&f, &f, &PolicySpec::default(), Knob::Gamma, &[1.0]).is_err());
        let fan = PolicySpec { method: Method::FixedOrderFan, ..Default::default() };
        assert!(sweep(&f, &f, &fan, Knob::Gamma, &[0.0]).is_err());
        assert_eq!(sweep(&f, &f, &fan, Knob::Gamma, &[2.0, 1.0]).unwrap().len(), 2);
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_indices(10, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.8, 1).unwrap(), (a, b));
        assert!(split_indices(10, 1.0, 1).is_err());

        let (tr, te) = split_csv_text("h\n1\n2\n3\n4\n5\n", 0.8, 3).unwrap();
        assert!(tr.starts_with("h\n") && te.starts_with("h\n"));
        assert_eq!(tr.lines().count() + te.lines().count(), 7);
    }

    #[test]
    fn histogram_and_table_layout() {
        let p = build_policy(&worked_example_file(), &PolicySpec::default()).unwrap();
        let m = evaluate_on(&p, &worked_example_file()).unwrap();
        assert_eq!(histogram_csv(&m), "models_evaluated,count\n1,4\n2,2\n3,2\n");
        let rows = vec![
            TimingRow { name: "Full".into(), pct_diff: 0.0, mean_models: 3.0, mean_us: 2.0, std_us: 0.1 },
            TimingRow { name: "QWYC*".into(), pct_diff: 0.0, mean_models: 1.75, mean_us: 1.0, std_us: 0.1 },
        ];
        let table = timing_table(&rows);
        assert!(table.starts_with("Algorithm | Test % Diff"));
        assert!(table.lines().nth(3).unwrap().ends_with("2.00x"));
    }
}
