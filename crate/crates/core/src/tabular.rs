//! Numeric feature tables with an optional 0/1 `label` column.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::ensemble::{csv_error, fmt_f64, parse_label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    feature_names: Vec<String>,
    n_rows: usize,
    /// Row-major, `n_rows * n_features`.
    features: Vec<f64>,
    labels: Option<Vec<bool>>,
}

impl TabularData {
    pub fn new(feature_names: Vec<String>, features: Vec<f64>, labels: Option<Vec<bool>>) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::invalid("a table needs at least one feature"));
        }
        if !features.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                what: "feature values",
                expected: features.len().div_ceil(d) * d,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        let n_rows = features.len() / d;
        if let Some(l) = &labels {
            if l.len() != n_rows {
                return Err(Error::DimensionMismatch { what: "labels", expected: n_rows, actual: l.len() });
            }
        }
        Ok(TabularData { feature_names, n_rows, features, labels })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn get(&self, i: usize, feature: usize) -> f64 {
        self.features[i * self.n_features() + feature]
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_rows) {
            return Err(Error::invalid(format!("row {bad} out of range")));
        }
        let features = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect());
        TabularData::new(self.feature_names.clone(), features, labels)
    }
}

pub fn parse_tabular_csv(text: &str) -> Result<TabularData> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
        Some(r) => r.map_err(csv_error)?,
    };
    let label_col = header.iter().position(|h| h == "label");
    let names: Vec<String> =
        header.iter().enumerate().filter(|&(k, _)| Some(k) != label_col).map(|(_, h)| h.to_string()).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        for (k, field) in record.iter().enumerate() {
            if Some(k) == label_col {
                labels.push(
                    parse_label(field).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("label must be 0 or 1, got `{field}`"),
                    })?,
                );
                continue;
            }
            let value: f64 =
                field.parse().map_err(|_| Error::Parse { line, message: format!("`{field}` is not a number") })?;
            if !value.is_finite() {
                return Err(Error::invalid(format!("line {line}: feature `{field}` is not finite")));
            }
            features.push(value);
        }
    }
    if features.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    TabularData::new(names, features, label_col.map(|_| labels))
}

pub fn load_tabular(path: &Path) -> Result<TabularData> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tabular_csv(&text)
}

pub fn write_tabular_csv<W: Write>(data: &TabularData, mut out: W) -> std::io::Result<()> {
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    if data.labels.is_some() {
        header.push("label");
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n_rows {
        let mut fields: Vec<String> = data.row(i).iter().map(|&v| fmt_f64(v)).collect();
        if let Some(l) = &data.labels {
            fields.push(u8::from(l[i]).to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn save_tabular(data: &TabularData, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_tabular_csv(data, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_column_anywhere() {
        let t = parse_tabular_csv("a,label,b\n1,0,2.5\n-3,1,4\n").unwrap();
        assert_eq!(t.feature_names(), &["a", "b"]);
        assert_eq!(t.row(1), &[-3.0, 4.0]);
        assert_eq!(t.labels().unwrap(), &[false, true]);
    }

    #[test]
    fn round_trip() {
        let t = parse_tabular_csv("x,y,label\n0.1,2,1\n3,-0.5,0\n").unwrap();
        let mut buf = Vec::new();
        write_tabular_csv(&t, &mut buf).unwrap();
        assert_eq!(parse_tabular_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), t);
    }

    #[test]
    fn unlabelled_and_bad_input() {
        assert!(parse_tabular_csv("x\n1\n").unwrap().labels().is_none());
        assert!(matches!(parse_tabular_csv(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_tabular_csv("x,label\n1,2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_tabular_csv("x\nabc\n"), Err(Error::Parse { .. })));
        assert!(parse_tabular_csv("x,y\n1\n").is_err());
        assert!(parse_tabular_csv("x\nNaN\n").is_err());
    }

    #[test]
    fn select_rows_keeps_labels() {
        let t = parse_tabular_csv("x,label\n1,0\n2,1\n3,1\n").unwrap();
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.row(0), &[3.0]);
        assert_eq!(s.labels().unwrap(), &[true, false]);
        assert!(t.select_rows(&[3]).is_err());
    }
}
