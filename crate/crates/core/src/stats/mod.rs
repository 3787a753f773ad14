//! Monte Carlo experiment drivers and the report types they produce.

mod experiments;
mod numeric;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use experiments::*;
pub use numeric::{kolmogorov_q, ks_normal, ks_two_sample, lag1_autocorr, mean_se, ols, quantile, Fit};

/// A named numeric table. Missing or non-finite cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row.iter().map(|x| x.is_finite().then_some(*x)).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// RFC 4180 CSV with a header row; `None` cells are empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.map(|x| x.to_string()).unwrap_or_default()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One comparison of a statistic against a stored threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub statistic: Option<f64>,
    /// `<=`, `>=` or `check` for structural conditions.
    pub rule: String,
    pub threshold: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn at_most(name: &str, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic: statistic.is_finite().then_some(statistic),
            rule: "<=".into(),
            threshold: Some(threshold),
            passed: statistic <= threshold,
            detail: String::new(),
        }
    }

    pub fn at_least(name: &str, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic: statistic.is_finite().then_some(statistic),
            rule: ">=".into(),
            threshold: Some(threshold),
            passed: statistic >= threshold,
            detail: String::new(),
        }
    }

    pub fn check(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), statistic: None, rule: "check".into(), threshold: None, passed, detail: detail.into() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    /// Resolved run configuration, filled in by the runner.
    #[serde(default)]
    pub config: serde_json::Value,
    /// Field and experiment parameters, thresholds included.
    pub parameters: serde_json::Value,
    pub estimates: BTreeMap<String, Option<f64>>,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, parameters: serde_json::Value) -> Self {
        Self {
            experiment: experiment.into(),
            config: serde_json::Value::Null,
            parameters,
            estimates: BTreeMap::new(),
            tables: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn estimate(&mut self, key: &str, x: f64) {
        self.estimates.insert(key.into(), x.is_finite().then_some(x));
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Aligned plain-text summary.
    pub fn to_text(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.experiment);
        for (k, v) in &self.estimates {
            let _ = writeln!(s, "  {k:<28} {}", fmt(*v));
        }
        for t in &self.tables {
            let _ = writeln!(s, "table {} ({} rows)", t.name, t.rows.len());
        }
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "  [{}] {:<30} {:>14} {:>5} {:>12}  {}",
                if v.passed { "pass" } else { "FAIL" },
                v.name,
                fmt(v.statistic),
                v.rule,
                fmt(v.threshold),
                v.detail
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Raw output written next to the report (NDJSON dumps).
#[derive(Clone, Debug, PartialEq)]
pub struct Dump {
    pub name: String,
    pub ndjson: Vec<u8>,
}

/// A report together with its raw dumps.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub dumps: Vec<Dump>,
}

impl From<ExperimentReport> for Outcome {
    fn from(report: ExperimentReport) -> Self {
        Self { report, dumps: Vec::new() }
    }
}
