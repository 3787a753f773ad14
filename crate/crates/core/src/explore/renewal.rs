use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DsfError, Result};
use crate::field::FieldConfig;
use crate::geom::LatticeSite;

use super::state::{ExplorationState, StepEvent, StepKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalRecord {
    pub j: usize,
    pub tau: u64,
    pub hat_sites: Vec<LatticeSite>,
    /// Transverse hat-site increment since the previous renewal (j ≥ 2).
    pub y: Option<Vec<i64>>,
    /// Transverse difference ĝ(u) − ĝ(v) (pair mode).
    pub z: Option<Vec<i64>>,
    pub gap: u64,
    pub width: f64,
}

fn transverse_diff(a: &LatticeSite, b: &LatticeSite) -> Vec<i64> {
    a.transverse().iter().zip(b.transverse()).map(|(x, y)| x - y).collect()
}

/// Streaming form of [`detect_renewals`].
#[derive(Clone, Debug)]
pub struct RenewalDetector {
    m_d: usize,
    run: usize,
    last_tau: u64,
    records: Vec<RenewalRecord>,
}

impl RenewalDetector {
    pub fn new(m_d: usize) -> Result<Self> {
        if m_d < 5 {
            return Err(DsfError::invalid(format!("m_d must be at least 5, got {m_d}")));
        }
        Ok(Self { m_d, run: 0, last_tau: 0, records: Vec::new() })
    }

    pub fn m_d(&self) -> usize {
        self.m_d
    }

    /// Feeds the next step (indices must be consecutive from 1); returns the
    /// new record if this step is a renewal.
    pub fn push(&mut self, ev: &StepEvent) -> Option<&RenewalRecord> {
        self.run = if ev.kind.is_up() { self.run + 1 } else { 0 };
        let n = ev.index;
        if ev.kind != StepKind::SpecialUp || self.run < self.m_d || n <= self.last_tau + self.m_d as u64 {
            return None;
        }
        let hat_sites: Vec<LatticeSite> = ev.positions.iter().map(|p| p.site).collect();
        let y = self.records.last().map(|prev| transverse_diff(&hat_sites[0], &prev.hat_sites[0]));
        let z = (hat_sites.len() == 2).then(|| transverse_diff(&hat_sites[0], &hat_sites[1]));
        let gap = n - self.last_tau;
        self.records.push(RenewalRecord {
            j: self.records.len() + 1,
            tau: n,
            hat_sites,
            y,
            z,
            gap,
            width: 2.0 * self.m_d as f64 * gap as f64,
        });
        self.last_tau = n;
        self.records.last()
    }

    pub fn records(&self) -> &[RenewalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RenewalRecord> {
        self.records
    }
}

/// τ_j = inf{n > τ_{j−1} + m_d : the last m_d steps are up and step n is special up}.
pub fn detect_renewals(log: &[StepEvent], m_d: usize) -> Result<Vec<RenewalRecord>> {
    let mut det = RenewalDetector::new(m_d)?;
    for ev in log {
        det.push(ev);
    }
    Ok(det.into_records())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Observables {
    /// Y_j for j ≥ 2.
    pub y: Vec<Vec<i64>>,
    /// Z_j for every record (pair mode).
    pub z: Vec<Vec<i64>>,
    pub gaps: Vec<u64>,
    pub widths: Vec<f64>,
    /// First j ≥ 2 with Z_j = 0.
    pub nu: Option<usize>,
}

/// Renewal-level sequences. Fewer than two records yields empty sequences.
pub fn extract_observables(records: &[RenewalRecord]) -> Observables {
    if records.len() < 2 {
        return Observables::default();
    }
    let z: Vec<Vec<i64>> = records.iter().filter_map(|r| r.z.clone()).collect();
    let nu = records.iter().skip(1).find(|r| r.z.as_ref().is_some_and(|z| z.iter().all(|c| *c == 0))).map(|r| r.j);
    Observables {
        y: records.iter().skip(1).filter_map(|r| r.y.clone()).collect(),
        z,
        gaps: records.iter().map(|r| r.gap).collect(),
        widths: records.iter().map(|r| r.width).collect(),
        nu,
    }
}

/// Result of [`run_with_renewals`].
#[derive(Clone, Debug)]
pub struct RenewalRun {
    pub records: Vec<RenewalRecord>,
    pub steps: u64,
    /// Whether the step budget ran out before `max_renewals` were found.
    pub truncated: bool,
}

/// Steps `state` until `max_renewals` renewals or `budget` steps.
pub fn run_with_renewals(
    state: &mut ExplorationState,
    field: &FieldConfig,
    m_d: usize,
    budget: u64,
    max_renewals: usize,
) -> Result<RenewalRun> {
    let mut det = RenewalDetector::new(m_d)?;
    let mut steps = 0;
    while steps < budget && det.records().len() < max_renewals {
        let ev = state.step(field);
        det.push(&ev);
        steps += 1;
    }
    let truncated = det.records().len() < max_renewals;
    Ok(RenewalRun { records: det.into_records(), steps, truncated })
}

/// One CSV row per record: j, tau, gap, Y…, Z…, W. Absent values are empty.
pub fn write_records_csv<W: Write>(out: W, records: &[RenewalRecord], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let t = dim - 1;
    let mut header = vec!["j".to_string(), "tau".into(), "gap".into()];
    header.extend((1..=t).map(|k| format!("y{k}")));
    header.extend((1..=t).map(|k| format!("z{k}")));
    header.push("width".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.j.to_string(), r.tau.to_string(), r.gap.to_string()];
        for v in [&r.y, &r.z] {
            match v {
                Some(v) => row.extend(v.iter().map(|c| c.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), t)),
            }
        }
        row.push(r.width.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Step log as NDJSON, one event per line.
pub fn write_log_ndjson<W: Write>(mut out: W, log: &[StepEvent]) -> Result<()> {
    for ev in log {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
