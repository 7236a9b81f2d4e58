//! Shared data model: per-model score matrices, evaluation costs, decision
//! configuration and the full-ensemble reference decisions.
//!
//! Score matrix CSV layout:
//!
//! ```text
//! id[,label],s0,s1,...,s{T-1}
//! e1,1,0.25,-0.5,...
//! ```
//!
//! The optional sidecar JSON is `{"beta": <real>, "costs": [<real> x T]}`;
//! both keys may be omitted (β defaults to 0, costs to all ones).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense N×T matrix of base-model outputs, `get(i, t) = f_t(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_examples: usize,
    n_models: usize,
    scores: Vec<f64>,
    labels: Option<Vec<bool>>,
    example_ids: Option<Vec<String>>,
}

impl ScoreMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_models = rows.first().map_or(0, Vec::len);
        let n_examples = rows.len();
        let mut scores = Vec::with_capacity(n_examples * n_models);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_models {
                return Err(Error::invalid(format!("row {i} has {} scores, expected {n_models}", row.len())));
            }
            scores.extend(row);
        }
        Self::from_flat(n_examples, n_models, scores)
    }

    /// Row-major constructor.
    pub fn from_flat(n_examples: usize, n_models: usize, scores: Vec<f64>) -> Result<Self> {
        if n_examples == 0 || n_models == 0 {
            return Err(Error::invalid("score matrix must have at least one row and one column"));
        }
        if scores.len() != n_examples * n_models {
            return Err(Error::DimensionMismatch {
                what: "score matrix entries",
                expected: n_examples * n_models,
                actual: scores.len(),
            });
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "score at row {}, model {} is not finite ({})",
                pos / n_models,
                pos % n_models,
                scores[pos]
            )));
        }
        Ok(ScoreMatrix { n_examples, n_models, scores, labels: None, example_ids: None })
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.n_examples {
            return Err(Error::DimensionMismatch { what: "labels", expected: self.n_examples, actual: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_example_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_examples {
            return Err(Error::DimensionMismatch { what: "example ids", expected: self.n_examples, actual: ids.len() });
        }
        self.example_ids = Some(ids);
        Ok(self)
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    #[inline]
    pub fn get(&self, example: usize, model: usize) -> f64 {
        self.scores[example * self.n_models + model]
    }

    #[inline]
    pub fn row(&self, example: usize) -> &[f64] {
        let start = example * self.n_models;
        &self.scores[start..start + self.n_models]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks_exact(self.n_models)
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn example_ids(&self) -> Option<&[String]> {
        self.example_ids.as_deref()
    }

    /// Copy with columns reordered so that new column `j` is old column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        validate_permutation(perm, self.n_models)?;
        let scores = self.rows().flat_map(|row| perm.iter().map(move |&t| row[t])).collect();
        Ok(ScoreMatrix { scores, ..self.clone() })
    }

    /// Copy restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut scores = Vec::with_capacity(rows.len() * self.n_models);
        for &i in rows {
            if i >= self.n_examples {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            scores.extend_from_slice(self.row(i));
        }
        let mut out = ScoreMatrix::from_flat(rows.len(), self.n_models, scores)?;
        if let Some(labels) = &self.labels {
            out.labels = Some(rows.iter().map(|&i| labels[i]).collect());
        }
        if let Some(ids) = &self.example_ids {
            out.example_ids = Some(rows.iter().map(|&i| ids[i].clone()).collect());
        }
        Ok(out)
    }
}

/// Per-model evaluation cost `c_t`, strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::invalid("cost vector is empty"));
        }
        if let Some(c) = costs.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::invalid(format!("costs must be finite and > 0, got {c}")));
        }
        Ok(CostVector(costs))
    }

    pub fn uniform(n_models: usize) -> Self {
        CostVector(vec![1.0; n_models])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn check_models(&self, n_models: usize) -> Result<()> {
        if self.len() != n_models {
            return Err(Error::DimensionMismatch { what: "costs", expected: n_models, actual: self.len() });
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for CostVector {
    type Output = f64;

    fn index(&self, t: usize) -> &f64 {
        &self.0[t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMode {
    /// Early positives and early negatives.
    #[default]
    TwoSided,
    /// Early rejection only; positives always pay for the full ensemble.
    FilterNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub beta: f64,
    /// Allowed fraction of examples whose fast decision differs from the full one.
    pub alpha: f64,
    pub mode: StoppingMode,
}

impl DecisionConfig {
    pub fn new(beta: f64, alpha: f64, mode: StoppingMode) -> Result<Self> {
        let config = DecisionConfig { beta, alpha, mode };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be finite, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Full-ensemble scores and decisions; ties at β are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FullReference {
    pub beta: f64,
    pub full_scores: Vec<f64>,
    pub full_decisions: Vec<bool>,
}

impl FullReference {
    pub fn n_positive(&self) -> usize {
        self.full_decisions.iter().filter(|&&d| d).count()
    }
}

/// Row sum in model-index order. Every path that needs the full score uses
/// this so that decisions agree bit-for-bit.
#[inline]
pub fn full_score(row: &[f64]) -> f64 {
    row.iter().sum()
}

pub fn full_reference(sm: &ScoreMatrix, beta: f64) -> FullReference {
    let full_scores: Vec<f64> = sm.rows().map(full_score).collect();
    let full_decisions = full_scores.iter().map(|&s| s >= beta).collect();
    FullReference { beta, full_scores, full_decisions }
}

pub fn validate_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::DimensionMismatch { what: "ordering length", expected: n, actual: order.len() });
    }
    let mut seen = vec![false; n];
    for &t in order {
        if t >= n || std::mem::replace(&mut seen[t], true) {
            return Err(Error::invalid(format!("ordering {order:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct MetaFile {
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    costs: Option<Vec<f64>>,
}

/// Score matrix plus the sidecar values that accompany it on disk.
#[derive(Debug, Clone)]
pub struct ScoreFile {
    pub scores: ScoreMatrix,
    pub costs: CostVector,
    pub beta: f64,
}

impl ScoreFile {
    pub fn config(&self, alpha: f64, mode: StoppingMode) -> Result<DecisionConfig> {
        DecisionConfig::new(self.beta, alpha, mode)
    }

    pub fn reference(&self) -> FullReference {
        full_reference(&self.scores, self.beta)
    }
}

pub fn load_score_matrix(path: &Path, meta: Option<&Path>) -> Result<ScoreFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let scores = parse_score_csv(&text)?;
    let (beta, costs) = match meta {
        Some(meta_path) => {
            let raw = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
            let meta: MetaFile = serde_json::from_str(&raw)?;
            (meta.beta.unwrap_or(0.0), meta.costs)
        }
        None => (0.0, None),
    };
    if !beta.is_finite() {
        return Err(Error::invalid("beta must be finite"));
    }
    let costs = match costs {
        Some(c) => {
            let c = CostVector::new(c)?;
            c.check_models(scores.n_models())?;
            c
        }
        None => CostVector::uniform(scores.n_models()),
    };
    Ok(ScoreFile { scores, costs, beta })
}

pub fn parse_score_csv(text: &str) -> Result<ScoreMatrix> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
        Some(r) => r.map_err(csv_error)?,
    };
    if header.get(0) != Some("id") {
        return Err(Error::Parse { line: 1, message: "header must start with `id`".into() });
    }
    let has_label = header.get(1) == Some("label");
    let first_score = if has_label { 2 } else { 1 };
    let n_models = header.len().saturating_sub(first_score);
    if n_models == 0 {
        return Err(Error::Parse { line: 1, message: "header names no score columns".into() });
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != first_score + n_models {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", first_score + n_models, record.len()),
            });
        }
        ids.push(record[0].to_string());
        if has_label {
            labels.push(parse_label(&record[1]).ok_or_else(|| Error::Parse {
                line,
                message: format!("label must be 0 or 1, got `{}`", &record[1]),
            })?);
        }
        for field in record.iter().skip(first_score) {
            let value: f64 =
                field.parse().map_err(|_| Error::Parse { line, message: format!("`{field}` is not a number") })?;
            if !value.is_finite() {
                return Err(Error::invalid(format!("line {line}: score `{field}` is not finite")));
            }
            scores.push(value);
        }
    }
    if ids.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    let n = ids.len();
    let mut sm = ScoreMatrix::from_flat(n, n_models, scores)?.with_example_ids(ids)?;
    if has_label {
        sm = sm.with_labels(labels)?;
    }
    Ok(sm)
}

pub(crate) fn parse_label(field: &str) -> Option<bool> {
    match field.parse::<f64>().ok()? {
        0.0 => Some(false),
        1.0 => Some(true),
        _ => None,
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

/// Shortest decimal that round-trips to the same f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_score_csv<W: Write>(sm: &ScoreMatrix, mut out: W) -> std::io::Result<()> {
    let has_label = sm.labels().is_some();
    write!(out, "id")?;
    if has_label {
        write!(out, ",label")?;
    }
    for t in 0..sm.n_models() {
        write!(out, ",s{t}")?;
    }
    writeln!(out)?;
    for (i, row) in sm.rows().enumerate() {
        match sm.example_ids() {
            Some(ids) => write!(out, "{}", ids[i])?,
            None => write!(out, "{i}")?,
        }
        if let Some(labels) = sm.labels() {
            write!(out, ",{}", u8::from(labels[i]))?;
        }
        for v in row {
            write!(out, ",{}", fmt_f64(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_score_matrix(sm: &ScoreMatrix, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_score_csv(sm, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn save_meta(path: &Path, beta: f64, costs: &CostVector) -> Result<()> {
    let meta = MetaFile { beta: Some(beta), costs: Some(costs.as_slice().to_vec()) };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
