use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dsf::{build_forest, coalesce_paths, search_radius, write_paths_ndjson, StepCache, Stop};
use crate::dual::{build_dual, primal_dual_crossings, probe_bi_infinite, write_dual_ndjson};
use crate::error::{DsfError, Result};
use crate::explore::{
    coupling_trial, default_m_d, extract_observables, run_with_renewals, ExplorationState, ExploreOptions, DEFAULT_DELTA,
};
use crate::field::{derive_seed, FieldConfig};
use crate::geom::{AxisBox, LatticeSite, Point};
use crate::scaling::{
    estimate_diffusivity, estimate_gamma_sigma, eta_count, level_crossings, origin_path, scale_path, Direction, GammaSigma, PathFamily,
};

use super::numeric::{ks_normal, ks_two_sample, mean_se, ols, quantile};
use super::{Dump, ExperimentReport, Outcome, Table, Verdict};

// derive_seed streams, one per experiment
const S_COALESCE: u64 = 0xC0A1;
const S_RENEWAL: u64 = 0x7E4E;
const S_INCREMENT: u64 = 0x14C7;
const S_DONSKER: u64 = 0xD045;
const S_NORMALIZE: u64 = 0x5167;
const S_TREE: u64 = 0x7EE5;
const S_FOSTER: u64 = 0xF057;
const S_COUPLING: u64 = 0xC0B1;
const S_DUAL: u64 = 0xD0A1;
const S_ETA: u64 = 0xE7A0;

/// Field parameters shared by every experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldParams {
    pub d: usize,
    pub seed: u64,
    pub rho: f64,
    pub delta: f64,
    pub m_d: Option<usize>,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self { d: 2, seed: 1, rho: 1.0, delta: DEFAULT_DELTA, m_d: None }
    }
}

impl FieldParams {
    pub fn m_d(&self) -> usize {
        self.m_d.unwrap_or_else(|| default_m_d(self.d, self.rho))
    }

    pub fn field(&self, stream: u64, index: u64) -> Result<FieldConfig> {
        FieldConfig::new(self.d, derive_seed(self.seed, stream, index))?.with_half_width(self.rho)
    }

    fn require_dim(&self, d: usize) -> Result<()> {
        if self.d != d {
            return Err(DsfError::invalid(format!("d={d} required, got d={}", self.d)));
        }
        Ok(())
    }
}

fn params_json<P: Serialize>(f: &FieldParams, p: &P) -> serde_json::Value {
    json!({ "field": f, "experiment": p, "m_d": f.m_d() })
}

fn lattice_point(coords: &[i64]) -> Point {
    let c: Vec<f64> = coords.iter().map(|x| *x as f64).collect();
    Point::new(&c).expect("valid dimension")
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

// ---------------------------------------------------------------- forest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub half_size: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { half_size: 10.0 }
    }
}

/// Edges ⟨x, h(x)⟩ in a centred box, dumped as NDJSON.
pub fn forest_experiment(f: &FieldParams, p: &ForestParams) -> Result<Outcome> {
    let field = f.field(0, 0)?;
    let edges = build_forest(&field, &AxisBox::centered(f.d, p.half_size)?)?;
    let mut report = ExperimentReport::new("forest", params_json(f, p));
    let r = search_radius(f.d, f.rho);
    let mut lengths: Vec<f64> = edges.iter().map(|(a, b)| a.position.l1(&b.position)).collect();
    lengths.sort_by(f64::total_cmp);
    report.estimate("edges", edges.len() as f64);
    report.estimate("mean_edge_l1", mean_se(&lengths).0);
    report.estimate("max_edge_l1", lengths.last().copied().unwrap_or(f64::NAN));
    report.verdicts.push(Verdict::check(
        "edges_point_up",
        edges.iter().all(|(a, b)| b.height() > a.height()),
        "h(x)(d) > x(d) for every edge",
    ));
    report.verdicts.push(Verdict::at_most("max_edge_l1", lengths.last().copied().unwrap_or(0.0), r));
    let mut buf = Vec::new();
    for (from, to) in &edges {
        serde_json::to_writer(&mut buf, &json!({ "from": from, "to": to }))?;
        buf.push(b'\n');
    }
    Ok(Outcome { report, dumps: vec![Dump { name: "edges".into(), ndjson: buf }] })
}

// ---------------------------------------------------------------- coalescence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoalesceParams {
    pub dx: Vec<i64>,
    pub t_grid: Vec<f64>,
    pub trials: usize,
    pub slope_target: f64,
    pub slope_tol: f64,
    /// Allowed relative spread of sup P̂√t/Δx across Δx.
    pub constant_tol: f64,
}

impl Default for CoalesceParams {
    fn default() -> Self {
        Self {
            dx: vec![2, 8],
            t_grid: (0..=8).map(|k| 100.0 * 10f64.powf(k as f64 / 4.0)).collect(),
            trials: 2000,
            slope_target: -0.5,
            slope_tol: 0.1,
            constant_tol: 0.2,
        }
    }
}

/// Coalescence heights T(u, v) − u(d) for u = 0, v = Δx·e₁, one per trial;
/// `None` when censored at `max_height`.
pub fn coalescence_times(f: &FieldParams, dx: i64, trials: usize, max_height: f64) -> Result<Vec<Option<f64>>> {
    let mut v = vec![0i64; f.d];
    v[0] = dx;
    let starts = [lattice_point(&vec![0; f.d]), lattice_point(&v)];
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let field = f.field(S_COALESCE, i as u64)?;
            Ok(coalesce_paths(&field, &starts, max_height)?.all_merged)
        })
        .collect()
}

/// P̂(T > t) per Δx and t, with the log-log tail slope and the scaled
/// constant sup_t P̂√t/Δx.
pub fn coalescence_experiment(f: &FieldParams, p: &CoalesceParams) -> Result<ExperimentReport> {
    if p.dx.iter().any(|d| *d < 0) || p.t_grid.iter().any(|t| !(*t > 0.0)) || p.t_grid.is_empty() || p.trials == 0 {
        return Err(DsfError::invalid("coalesce needs dx >= 0, positive times and trials"));
    }
    let t_max = p.t_grid.iter().copied().fold(0.0, f64::max);
    let mut report = ExperimentReport::new("coalesce", params_json(f, p));
    let mut table = Table::new("survival", &["dx", "t", "survival", "se", "scaled"]);
    let mut sups = Vec::new();
    for &dx in &p.dx {
        let times = coalescence_times(f, dx, p.trials, t_max)?;
        let censored = times.iter().filter(|t| t.is_none()).count();
        report.estimate(&format!("censored_dx{dx}"), censored as f64);
        let n = p.trials as f64;
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        let mut sup: f64 = 0.0;
        for &t in &p.t_grid {
            // censored runs are still unmerged at t_max >= t
            let s = times.iter().filter(|x| x.is_none_or(|x| x > t)).count() as f64 / n;
            let se = (s * (1.0 - s) / n).sqrt();
            let scaled = if dx > 0 { s * t.sqrt() / dx as f64 } else { f64::NAN };
            table.push(&[dx as f64, t, s, se, scaled]);
            if s > 0.0 {
                lx.push(t.ln());
                ly.push(s.ln());
            }
            if scaled.is_finite() {
                sup = sup.max(scaled);
            }
        }
        let fit = ols(&lx, &ly);
        report.estimate(&format!("slope_dx{dx}"), fit.slope);
        report.estimate(&format!("sup_scaled_dx{dx}"), sup);
        if dx > 0 {
            sups.push(sup);
            report.verdicts.push(
                Verdict::at_most(&format!("slope_dx{dx}"), (fit.slope - p.slope_target).abs(), p.slope_tol)
                    .with_detail(format!("|slope - ({})|, slope = {:.4}", p.slope_target, fit.slope)),
            );
        }
    }
    if sups.len() >= 2 {
        let hi = sups.iter().copied().fold(f64::MIN, f64::max);
        let lo = sups.iter().copied().fold(f64::MAX, f64::min);
        report.verdicts.push(
            Verdict::at_most("constant_spread", (hi - lo) / hi, p.constant_tol)
                .with_detail("relative spread of sup P*sqrt(t)/dx across dx"),
        );
    }
    report.tables.push(table);
    Ok(report)
}

// ---------------------------------------------------------------- renewals

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenewalParams {
    pub runs: usize,
    /// Exploration steps per run.
    pub budget: u64,
    pub target_gaps: usize,
    pub min_survival: f64,
    pub r2_min: f64,
}

impl Default for RenewalParams {
    fn default() -> Self {
        Self { runs: 4, budget: 2_000_000, target_gaps: 10_000, min_survival: 1e-3, r2_min: 0.98 }
    }
}

/// Renewal records of `runs` independent single explorations from the origin.
pub fn renewal_runs(
    f: &FieldParams,
    stream: u64,
    runs: usize,
    budget: u64,
    per_run: usize,
) -> Result<Vec<(Vec<crate::explore::RenewalRecord>, u64)>> {
    let m_d = f.m_d();
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let field = f.field(stream, i as u64)?;
            let mut st = ExplorationState::single(&field, LatticeSite::origin(f.d), ExploreOptions::lean(f.delta))?;
            let run = run_with_renewals(&mut st, &field, m_d, budget, per_run)?;
            Ok((run.records, run.steps))
        })
        .collect()
}

/// Empirical survival of pooled gaps with a log-linear fit over S ≥ `min_survival`.
pub fn gap_survival(gaps: &[u64], min_survival: f64) -> (Vec<(u64, f64)>, super::Fit) {
    if gaps.is_empty() {
        return (Vec::new(), ols(&[], &[]));
    }
    let mut g = gaps.to_vec();
    g.sort_unstable();
    let n = g.len() as f64;
    let max = *g.last().unwrap();
    let mut curve = Vec::new();
    let mut i = 0;
    for k in 0..=max {
        while i < g.len() && g[i] <= k {
            i += 1;
        }
        curve.push((k, (g.len() - i) as f64 / n));
    }
    let (x, y): (Vec<f64>, Vec<f64>) =
        curve.iter().filter(|(_, s)| *s >= min_survival && *s > 0.0).map(|(k, s)| (*k as f64, s.ln())).unzip();
    (curve, ols(&x, &y))
}

pub fn renewal_tail_experiment(f: &FieldParams, p: &RenewalParams) -> Result<ExperimentReport> {
    let per_run = p.target_gaps.div_ceil(p.runs.max(1)) + 1;
    let runs = renewal_runs(f, S_RENEWAL, p.runs, p.budget, per_run)?;
    let mut report = ExperimentReport::new("renewals", params_json(f, p));
    let mut records = Table::new("records", &["run", "j", "tau", "gap", "width"]);
    let mut gaps = Vec::new();
    let mut shortfall = 0;
    let mut steps = 0;
    for (r, (recs, n)) in runs.iter().enumerate() {
        steps += n;
        if recs.len() < 2 {
            shortfall += 1;
        }
        for rec in recs {
            records.push(&[r as f64, rec.j as f64, rec.tau as f64, rec.gap as f64, rec.width]);
            if rec.j >= 2 {
                gaps.push(rec.gap);
            }
        }
    }
    let (curve, fit) = gap_survival(&gaps, p.min_survival);
    let mut surv = Table::new("survival", &["n", "survival"]);
    for (k, s) in &curve {
        surv.push(&[*k as f64, *s]);
    }
    report.estimate("steps", steps as f64);
    report.estimate("renewals", runs.iter().map(|(r, _)| r.len()).sum::<usize>() as f64);
    report.estimate("gaps", gaps.len() as f64);
    report.estimate("runs_short_of_two_renewals", shortfall as f64);
    report.estimate("rate", -fit.slope);
    report.estimate("r2", fit.r2);
    report.verdicts.push(Verdict::at_least("gaps", gaps.len() as f64, p.target_gaps as f64));
    report.verdicts.push(Verdict::at_least("log_linear_r2", fit.r2, p.r2_min));
    if gaps.is_empty() {
        report.notes.push(format!("no renewal gaps in {steps} exploration steps"));
    }
    report.tables.push(surv);
    report.tables.push(records);
    Ok(report)
}

// ---------------------------------------------------------------- increments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementParams {
    pub runs: usize,
    pub budget: u64,
    pub target_samples: usize,
    pub min_samples: usize,
    pub alpha: f64,
    pub se_factor: f64,
}

impl Default for IncrementParams {
    fn default() -> Self {
        Self { runs: 4, budget: 2_000_000, target_samples: 10_000, min_samples: 1000, alpha: 0.01, se_factor: 3.0 }
    }
}

/// Statistical checks on Y sequences (one per run, in renewal order).
pub fn increment_tests(dim: usize, sequences: &[Vec<Vec<i64>>], p: &IncrementParams) -> ExperimentReport {
    let mut report = ExperimentReport::new("increments", json!({ "d": dim, "experiment": p }));
    let ys: Vec<&Vec<i64>> = sequences.iter().flatten().collect();
    let n = ys.len();
    let coord = |k: usize| -> Vec<f64> { ys.iter().map(|y| y[k] as f64).collect() };
    report.estimate("samples", n as f64);
    report.verdicts.push(Verdict::at_least("samples", n as f64, p.min_samples as f64));

    let y1 = coord(0);
    let neg: Vec<f64> = y1.iter().map(|y| -y).collect();
    let (d, pval) = ks_two_sample(&y1, &neg);
    report.estimate("symmetry_ks", d);
    report.verdicts.push(Verdict::at_least("symmetry_ks_pvalue", pval, p.alpha));

    let mut moments = Table::new("moments", &["coordinate", "mean", "se"]);
    for k in 0..dim - 1 {
        let (m, se) = mean_se(&coord(k));
        moments.push(&[k as f64 + 1.0, m, se]);
        report.verdicts.push(Verdict::at_most(&format!("mean_y{}", k + 1), m.abs() / se, p.se_factor).with_detail("|mean| / SE"));
    }
    let cube: Vec<f64> = y1.iter().map(|y| y * y * y).collect();
    let (m3, se3) = mean_se(&cube);
    report.estimate("e_y1_cubed", m3);
    report.estimate("e_y1_cubed_se", se3);
    if dim == 3 {
        let y2 = coord(1);
        let (_, pex) = ks_two_sample(&y1, &y2);
        report.verdicts.push(Verdict::at_least("exchange_ks_pvalue", pex, p.alpha));
        let prod: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a * b).collect();
        let (mc, sec) = mean_se(&prod);
        report.estimate("e_y1_y2", mc);
        report.estimate("e_y1_y2_se", sec);
        report.verdicts.push(Verdict::at_most("cross_moment", mc.abs() / sec, p.se_factor).with_detail("|E[Y1 Y2]| / SE"));
    }
    // autocorrelation within runs, pooled
    let mut num = 0.0;
    let mut den = 0.0;
    let (m, _) = mean_se(&y1);
    let mut pairs = 0usize;
    for s in sequences {
        for w in s.windows(2) {
            num += (w[0][0] as f64 - m) * (w[1][0] as f64 - m);
            pairs += 1;
        }
        for y in s {
            den += (y[0] as f64 - m).powi(2);
        }
    }
    let rho = if pairs > 0 { num / den } else { f64::NAN };
    report.estimate("lag1_autocorr", rho);
    report.verdicts.push(Verdict::at_most("lag1_autocorr", rho.abs(), 3.0 / (n as f64).sqrt()));
    report.tables.push(moments);
    report
}

pub fn increments_experiment(f: &FieldParams, p: &IncrementParams) -> Result<ExperimentReport> {
    let per_run = p.target_samples.div_ceil(p.runs.max(1)) + 1;
    let runs = renewal_runs(f, S_INCREMENT, p.runs, p.budget, per_run)?;
    let sequences: Vec<Vec<Vec<i64>>> = runs.iter().map(|(r, _)| extract_observables(r).y).collect();
    let mut report = increment_tests(f.d, &sequences, p);
    report.parameters = params_json(f, p);
    report.estimate("steps", runs.iter().map(|(_, n)| *n).sum::<u64>() as f64);
    let mut raw = Table::new("y", &(1..f.d).map(|k| ["y1", "y2"][k - 1]).chain(["run"]).collect::<Vec<_>>());
    for (r, s) in sequences.iter().enumerate() {
        for y in s {
            let mut row: Vec<f64> = y.iter().map(|c| *c as f64).collect();
            row.push(r as f64);
            raw.push(&row);
        }
    }
    report.tables.push(raw);
    Ok(report)
}

// ---------------------------------------------------------------- normalization

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Normalization {
    /// `auto`, `renewal` or `diffusive`.
    pub method: String,
    pub renewal_trials: usize,
    pub renewal_budget: u64,
    pub diffusive_trials: usize,
    pub diffusive_height: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { method: "auto".into(), renewal_trials: 30, renewal_budget: 100_000, diffusive_trials: 5000, diffusive_height: 2500.0 }
    }
}

/// Frozen (γ̂, σ̂). `auto` tries the renewal estimator and falls back to the
/// diffusive one when fewer than 30 trials produced two renewals.
pub fn normalize(f: &FieldParams, p: &Normalization, report: &mut ExperimentReport) -> Result<Option<GammaSigma>> {
    let use_renewal = match p.method.as_str() {
        "auto" | "renewal" => true,
        "diffusive" => false,
        m => return Err(DsfError::Config(format!("unknown normalization method {m:?}"))),
    };
    if use_renewal {
        let (est, _) =
            estimate_gamma_sigma(f.d, f.rho, derive_seed(f.seed, S_NORMALIZE, 0), p.renewal_trials, p.renewal_budget, f.m_d(), f.delta)?;
        report.estimate("renewal_trials_used", est.trials as f64);
        report.estimate("renewal_shortfall", est.shortfall as f64);
        if est.trials >= 30 {
            report.estimate("gamma", est.gamma);
            report.estimate("sigma", est.sigma);
            report.notes.push("normalization: renewal blocks".into());
            return Ok(Some(est));
        }
        if p.method == "renewal" {
            report.verdicts.push(Verdict::at_least("renewal_normalization_trials", est.trials as f64, 30.0));
            return Ok(None);
        }
        report.notes.push(format!(
            "normalization: {} of {} renewal trials short within {} steps; using the diffusive estimate",
            est.shortfall, p.renewal_trials, p.renewal_budget
        ));
    }
    f.require_dim(2)?;
    let est = estimate_diffusivity(f.rho, derive_seed(f.seed, S_NORMALIZE, 1), p.diffusive_trials, p.diffusive_height)?;
    report.estimate("gamma", est.gamma);
    report.estimate("sigma", est.sigma);
    report.estimate("sigma_ci_lo", est.sigma_ci.0);
    report.estimate("sigma_ci_hi", est.sigma_ci.1);
    Ok(Some(est))
}

// ---------------------------------------------------------------- donsker

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DonskerParams {
    pub n: Vec<u32>,
    pub trials: usize,
    pub times: Vec<f64>,
    pub normalization: Normalization,
    pub ks_max: f64,
    pub r2_min: f64,
    pub var_tol: f64,
}

impl Default for DonskerParams {
    fn default() -> Self {
        Self {
            n: vec![50],
            trials: 2000,
            times: vec![0.25, 0.5, 1.0],
            normalization: Normalization::default(),
            ks_max: 0.05,
            r2_min: 0.99,
            var_tol: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DonskerStats {
    /// KS distance to N(0, t_max) of the samples at the last time, standardized.
    pub ks: f64,
    pub variances: Vec<f64>,
    pub fit: super::Fit,
}

/// KS distance of the last-time samples to N(0,1) and the variance-vs-time fit.
pub fn donsker_stats(samples: &[Vec<f64>], times: &[f64]) -> DonskerStats {
    let variances: Vec<f64> = samples
        .iter()
        .map(|xs| {
            let n = xs.len() as f64;
            xs.iter().map(|x| x * x).sum::<f64>() / n
        })
        .collect();
    DonskerStats { ks: ks_normal(samples.last().unwrap()), fit: ols(times, &variances), variances }
}

pub fn donsker_test(f: &FieldParams, p: &DonskerParams) -> Result<ExperimentReport> {
    f.require_dim(2)?;
    if p.times.is_empty() || p.times.iter().any(|t| !(*t > 0.0)) || p.trials < 2 {
        return Err(DsfError::invalid("donsker needs positive times and at least two trials"));
    }
    let mut report = ExperimentReport::new("donsker", params_json(f, p));
    let Some(gs) = normalize(f, &p.normalization, &mut report)? else {
        return Ok(report);
    };
    let t_last = *p.times.last().unwrap();
    let mut table = Table::new("variance", &["n", "t", "variance"]);
    for &n in &p.n {
        let height = (n as f64).powi(2) * gs.gamma * p.times.iter().copied().fold(0.0, f64::max);
        let rows: Vec<Vec<f64>> = (0..p.trials)
            .into_par_iter()
            .map(|i| {
                let field = f.field(S_DONSKER, i as u64)?;
                let path = scale_path(&origin_path(&field, height)?, n, gs.gamma, gs.sigma, Direction::Forward)?;
                p.times.iter().map(|t| path.value(*t)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let samples: Vec<Vec<f64>> = (0..p.times.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
        let st = donsker_stats(&samples, &p.times);
        for (t, v) in p.times.iter().zip(&st.variances) {
            table.push(&[n as f64, *t, *v]);
        }
        report.estimate(&format!("ks_n{n}"), st.ks);
        report.estimate(&format!("variance_slope_n{n}"), st.fit.slope);
        report.estimate(&format!("variance_r2_n{n}"), st.fit.r2);
        report.verdicts.push(Verdict::at_most(&format!("ks_n{n}"), st.ks, p.ks_max));
        report.verdicts.push(Verdict::at_least(&format!("variance_r2_n{n}"), st.fit.r2, p.r2_min));
        let v_last = *st.variances.last().unwrap();
        report.verdicts.push(
            Verdict::at_most(&format!("variance_at_t{t_last}_n{n}"), (v_last / t_last - 1.0).abs(), p.var_tol)
                .with_detail(format!("variance {v_last:.4}")),
        );
    }
    report.tables.push(table);
    Ok(report)
}

// ---------------------------------------------------------------- treeness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreenessParams {
    pub k: usize,
    /// Transverse displacement between consecutive starts (d − 1 entries).
    pub spacing: Vec<i64>,
    /// Heights above the common start level.
    pub budgets: Vec<f64>,
    pub trials: usize,
    pub min_fraction: f64,
    pub require_increase: bool,
}

impl Default for TreenessParams {
    fn default() -> Self {
        Self { k: 5, spacing: vec![5], budgets: vec![1e5], trials: 200, min_fraction: 0.99, require_increase: false }
    }
}

pub fn treeness_experiment(f: &FieldParams, p: &TreenessParams) -> Result<ExperimentReport> {
    if p.k == 0 || p.spacing.len() != f.d - 1 || p.budgets.is_empty() || p.trials == 0 {
        return Err(DsfError::invalid(format!("treeness needs k >= 1, {} spacing entries, budgets and trials", f.d - 1)));
    }
    let max_b = p.budgets.iter().copied().fold(0.0, f64::max);
    let starts: Vec<Point> = (0..p.k as i64)
        .map(|i| {
            let mut c: Vec<i64> = p.spacing.iter().map(|s| i * s).collect();
            c.push(0);
            lattice_point(&c)
        })
        .collect();
    let heights: Vec<Option<f64>> = (0..p.trials)
        .into_par_iter()
        .map(|i| Ok(coalesce_paths(&f.field(S_TREE, i as u64)?, &starts, max_b)?.all_merged))
        .collect::<Result<_>>()?;
    let mut report = ExperimentReport::new("treeness", params_json(f, p));
    let mut table = Table::new("coalesced", &["budget", "fraction", "se", "censored"]);
    let n = p.trials as f64;
    let mut fractions = Vec::new();
    for &b in &p.budgets {
        let ok = heights.iter().filter(|h| h.is_some_and(|h| h <= b)).count() as f64;
        let fr = ok / n;
        table.push(&[b, fr, (fr * (1.0 - fr) / n).sqrt(), n - ok]);
        fractions.push(fr);
    }
    let mut merged: Vec<f64> = heights.iter().flatten().copied().collect();
    merged.sort_by(f64::total_cmp);
    for q in [0.5, 0.9, 0.99] {
        report.estimate(&format!("height_q{q}"), quantile(&merged, q));
    }
    let last = *fractions.last().unwrap();
    report.estimate("coalesced_fraction", last);
    report.verdicts.push(Verdict::at_least("coalesced_fraction", last, p.min_fraction));
    if p.require_increase {
        report.verdicts.push(Verdict::check(
            "fraction_increases",
            fractions.windows(2).all(|w| w[1] > w[0]),
            format!("fractions along budgets: {fractions:?}"),
        ));
    }
    report.tables.push(table);
    Ok(report)
}

// ---------------------------------------------------------------- foster

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FosterParams {
    pub shells: Vec<[f64; 2]>,
    /// Initial transverse separations along e₁, cycled over runs.
    pub separations: Vec<i64>,
    pub runs: usize,
    pub budget: u64,
    pub min_transitions: usize,
    pub se_factor: f64,
}

impl Default for FosterParams {
    fn default() -> Self {
        Self {
            shells: vec![[20.0, 40.0], [40.0, 80.0]],
            separations: vec![30, 60],
            runs: 2,
            budget: 1_000_000,
            min_transitions: 10_000,
            se_factor: 2.0,
        }
    }
}

/// f(v) = √log(1 + ‖v‖²).
pub fn foster_f(v: &[i64]) -> f64 {
    let r2: f64 = v.iter().map(|c| (*c as f64).powi(2)).sum();
    (1.0 + r2).ln().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShellDrift {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
}

/// Ê[f(Z_{j+1}) − f(Z_j) | ‖Z_j‖ ∈ [lo, hi)], skipping absorbed Z_j = 0.
pub fn drift_by_shell(transitions: &[(Vec<i64>, Vec<i64>)], shells: &[[f64; 2]]) -> Vec<ShellDrift> {
    shells
        .iter()
        .map(|[lo, hi]| {
            let diffs: Vec<f64> = transitions
                .iter()
                .filter(|(z, _)| z.iter().any(|c| *c != 0))
                .filter(|(z, _)| {
                    let r = z.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
                    *lo <= r && r < *hi
                })
                .map(|(z, w)| foster_f(w) - foster_f(z))
                .collect();
            let (mean, se) = mean_se(&diffs);
            ShellDrift { lo: *lo, hi: *hi, count: diffs.len(), mean, se }
        })
        .collect()
}

pub fn foster_drift_experiment(f: &FieldParams, p: &FosterParams) -> Result<ExperimentReport> {
    if f.d != 3 {
        return Err(DsfError::invalid(format!("foster: d=3 required, got d={}", f.d)));
    }
    if p.separations.is_empty() || p.runs == 0 {
        return Err(DsfError::invalid("foster needs separations and runs"));
    }
    let m_d = f.m_d();
    let runs: Vec<(Vec<Vec<i64>>, u64)> = (0..p.runs)
        .into_par_iter()
        .map(|i| {
            let field = f.field(S_FOSTER, i as u64)?;
            let sep = p.separations[i % p.separations.len()];
            let v = LatticeSite::new(&[sep, 0, 0])?;
            let mut st = ExplorationState::pair(&field, LatticeSite::origin(3), v, ExploreOptions::lean(f.delta))?;
            let run = run_with_renewals(&mut st, &field, m_d, p.budget, usize::MAX)?;
            Ok((run.records.iter().filter_map(|r| r.z.clone()).collect(), run.steps))
        })
        .collect::<Result<_>>()?;
    let transitions: Vec<(Vec<i64>, Vec<i64>)> =
        runs.iter().flat_map(|(zs, _)| zs.windows(2).map(|w| (w[0].clone(), w[1].clone()))).collect();
    let mut report = ExperimentReport::new("foster", params_json(f, p));
    report.estimate("steps", runs.iter().map(|(_, n)| *n).sum::<u64>() as f64);
    report.estimate("joint_renewals", runs.iter().map(|(z, _)| z.len()).sum::<usize>() as f64);
    report.estimate("transitions", transitions.len() as f64);
    let mut table = Table::new("drift", &["shell_lo", "shell_hi", "count", "mean", "se"]);
    for s in drift_by_shell(&transitions, &p.shells) {
        table.push(&[s.lo, s.hi, s.count as f64, s.mean, s.se]);
        let name = format!("shell_{}_{}", s.lo, s.hi);
        report.verdicts.push(Verdict::at_least(&format!("{name}_transitions"), s.count as f64, p.min_transitions as f64));
        let z = -s.mean / s.se;
        report.verdicts.push(
            Verdict::at_least(&format!("{name}_drift_z"), z, p.se_factor)
                .with_detail(format!("-mean/SE; mean = {:.5}, SE = {:.5}", s.mean, s.se)),
        );
    }
    report.tables.push(table);
    Ok(report)
}

// ---------------------------------------------------------------- coupling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingParams {
    pub radii: Vec<f64>,
    pub trials: usize,
    pub separation: i64,
    pub budget: u64,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self { radii: vec![5.0, 10.0, 20.0], trials: 100, separation: 64, budget: 10_000 }
    }
}

pub fn coupling_experiment(f: &FieldParams, p: &CouplingParams) -> Result<ExperimentReport> {
    let r_max = p.radii.iter().copied().fold(0.0, f64::max);
    if p.separation as f64 <= 3.0 * r_max {
        return Err(DsfError::invalid("coupling needs separation > 3 max(r)"));
    }
    let u = LatticeSite::origin(f.d);
    let mut vc = vec![0i64; f.d];
    vc[0] = p.separation;
    let v = LatticeSite::new(&vc)?;
    let m_d = f.m_d();
    let mut report = ExperimentReport::new("coupling", params_json(f, p));
    let mut table = Table::new("coupling", &["r", "trials", "successes", "frequency", "se", "renewals_reached"]);
    let mut freqs = Vec::new();
    let mut definitional = true;
    for &r in &p.radii {
        let outs: Vec<_> = (0..p.trials)
            .into_par_iter()
            .map(|i| {
                let i = i as u64;
                let (a, b, c) = (f.field(S_COUPLING, 3 * i)?, f.field(S_COUPLING, 3 * i + 1)?, f.field(S_COUPLING, 3 * i + 2)?);
                coupling_trial(&a, &b, &c, u, v, r, m_d, f.delta, p.budget)
            })
            .collect::<Result<_>>()?;
        let ok = outs.iter().filter(|o| o.success).count();
        let reached = outs.iter().filter(|o| o.tau1.is_some()).count();
        // on W₁ < r the trial must couple
        definitional &= outs.iter().all(|o| o.success || o.width1.is_none_or(|w| w >= r));
        let fr = ok as f64 / p.trials as f64;
        freqs.push(fr);
        table.push(&[r, p.trials as f64, ok as f64, fr, (fr * (1.0 - fr) / p.trials as f64).sqrt(), reached as f64]);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = p.radii.iter().zip(&freqs).filter(|(_, fr)| **fr < 1.0).map(|(r, fr)| (*r, (1.0 - fr).ln())).unzip();
    let fit = ols(&x, &y);
    report.estimate("failure_decay_rate", -fit.slope);
    let mut sorted: Vec<(f64, f64)> = p.radii.iter().copied().zip(freqs.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    report.verdicts.push(Verdict::check(
        "frequency_non_decreasing",
        sorted.windows(2).all(|w| w[1].1 >= w[0].1),
        format!("frequencies {freqs:?}"),
    ));
    report.verdicts.push(Verdict::check("failures_have_w1_at_least_r", definitional, "W1 < r implies success"));
    report.tables.push(table);
    Ok(report)
}

// ---------------------------------------------------------------- dual

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualParams {
    pub sizes: Vec<f64>,
    pub seeds: usize,
    pub margin: f64,
    pub probe_width: f64,
    pub probe_heights: Vec<f64>,
    pub slab: f64,
    /// Dump the dual edges of the first seed and smallest size.
    pub dump: bool,
}

impl Default for DualParams {
    fn default() -> Self {
        Self {
            sizes: vec![50.0, 100.0, 200.0],
            seeds: 20,
            margin: 40.0,
            probe_width: 60.0,
            probe_heights: vec![100.0, 200.0, 400.0],
            slab: 5.0,
            dump: false,
        }
    }
}

/// size, seed ok, acyclic, crossings, optional dump
type DualRow = (usize, bool, bool, usize, Option<Vec<u8>>);

pub fn dual_experiment(f: &FieldParams, p: &DualParams) -> Result<Outcome> {
    f.require_dim(2)?;
    let mut report = ExperimentReport::new("dual", params_json(f, p));
    let mut table = Table::new("structure", &["size", "seed", "vertices", "out_degree_ok", "cycle", "crossings"]);
    let mut dumps = Vec::new();
    let (mut degree_ok, mut acyclic, mut crossings) = (true, true, 0usize);
    for &s in &p.sizes {
        let window = AxisBox::new(&[-s / 2.0, 0.0], &[s / 2.0, s])?;
        let rows: Vec<DualRow> = (0..p.seeds)
            .into_par_iter()
            .map(|i| {
                let field = f.field(S_DUAL, i as u64)?;
                let forest = build_dual(&field, &window, p.margin)?;
                let deg = forest.next.len() == forest.vertices.len() && forest.index().len() == forest.vertices.len();
                let dump = if p.dump && i == 0 && s == p.sizes[0] {
                    let mut buf = Vec::new();
                    write_dual_ndjson(&mut buf, &forest)?;
                    Some(buf)
                } else {
                    None
                };
                Ok((forest.vertices.len(), deg, forest.has_cycle(), primal_dual_crossings(&field, &forest)?, dump))
            })
            .collect::<Result<_>>()?;
        for (i, (nv, deg, cyc, cr, dump)) in rows.into_iter().enumerate() {
            table.push(&[s, i as f64, nv as f64, deg as u8 as f64, cyc as u8 as f64, cr as f64]);
            degree_ok &= deg;
            acyclic &= !cyc;
            crossings += cr;
            if let Some(buf) = dump {
                dumps.push(Dump { name: "dual".into(), ndjson: buf });
            }
        }
    }
    report.verdicts.push(Verdict::check("out_degree_one", degree_ok, "one outgoing dual edge per dual vertex"));
    report.verdicts.push(Verdict::check("acyclic", acyclic, ""));
    report.verdicts.push(Verdict::at_most("primal_dual_crossings", crossings as f64, 0.0));

    let mut probe = Table::new("probe", &["height", "seeds", "multi_component_fraction", "mean_components"]);
    let mut fractions = Vec::new();
    for &h in &p.probe_heights {
        let window = AxisBox::new(&[-p.probe_width / 2.0, 0.0], &[p.probe_width / 2.0, h])?;
        let probes: Vec<_> = (0..p.seeds)
            .into_par_iter()
            .map(|i| {
                let field = f.field(S_DUAL, i as u64)?;
                probe_bi_infinite(&field, &build_dual(&field, &window, p.margin)?, p.slab)
            })
            .collect::<Result<_>>()?;
        let multi = probes.iter().filter(|b| b.multi_component).count() as f64 / p.seeds as f64;
        let comps = probes.iter().map(|b| b.components as f64).sum::<f64>() / p.seeds as f64;
        probe.push(&[h, p.seeds as f64, multi, comps]);
        fractions.push(multi);
    }
    report.verdicts.push(Verdict::check(
        "multi_component_non_increasing",
        non_increasing(&fractions),
        format!("fractions along heights: {fractions:?}"),
    ));
    report.tables.push(table);
    report.tables.push(probe);
    Ok(Outcome { report, dumps })
}

// ---------------------------------------------------------------- eta

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtaParams {
    pub n: u32,
    pub epsilons: Vec<f64>,
    pub t: f64,
    pub trials: usize,
    pub normalization: Normalization,
}

impl Default for EtaParams {
    fn default() -> Self {
        Self { n: 50, epsilons: vec![0.4, 0.2, 0.1, 0.05], t: 0.1, trials: 500, normalization: Normalization::default() }
    }
}

/// η(0, t; 0, ε) for each ε on one field, using every path that crosses level 0.
pub fn eta_trial(field: &FieldConfig, n: u32, gs: &GammaSigma, t: f64, epsilons: &[f64]) -> Result<Vec<usize>> {
    let scale = n as f64 * gs.sigma;
    let eps_max = epsilons.iter().copied().fold(0.0, f64::max);
    let top = (n as f64).powi(2) * gs.gamma * t;
    let mut cache = StepCache::new(field);
    let mut paths = Vec::new();
    for (p, _, _) in level_crossings(field, 0.0, 0.0, eps_max * scale)? {
        let mut vertices = vec![p];
        while vertices.last().unwrap().height() < top {
            let next = cache.step(vertices.last().unwrap());
            vertices.push(next);
        }
        let line = crate::dsf::DsfPath { vertices }.polyline()?;
        paths.push(scale_path(&line, n, gs.gamma, gs.sigma, Direction::Forward)?);
    }
    let family = PathFamily::new(paths)?;
    epsilons.iter().map(|e| eta_count(&family, 0.0, t, 0.0, *e)).collect()
}

pub fn eta_experiment(f: &FieldParams, p: &EtaParams) -> Result<ExperimentReport> {
    f.require_dim(2)?;
    if p.epsilons.is_empty() || p.epsilons.iter().any(|e| !(*e > 0.0)) || !(p.t > 0.0) || p.trials == 0 {
        return Err(DsfError::invalid("eta needs positive epsilons, t and trials"));
    }
    let mut report = ExperimentReport::new("eta", params_json(f, p));
    let Some(gs) = normalize(f, &p.normalization, &mut report)? else {
        return Ok(report);
    };
    let mut eps = p.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let counts: Vec<Vec<usize>> =
        (0..p.trials).into_par_iter().map(|i| eta_trial(&f.field(S_ETA, i as u64)?, p.n, &gs, p.t, &eps)).collect::<Result<_>>()?;
    let mut table = Table::new("eta", &["epsilon", "t", "trials", "p_eta_ge_2", "p_eta_ge_3_over_eps"]);
    let (mut p2s, mut p3s) = (Vec::new(), Vec::new());
    let n = p.trials as f64;
    for (k, e) in eps.iter().enumerate() {
        let p2 = counts.iter().filter(|c| c[k] >= 2).count() as f64 / n;
        let p3 = counts.iter().filter(|c| c[k] >= 3).count() as f64 / n / e;
        table.push(&[*e, p.t, n, p2, p3]);
        p2s.push(p2);
        p3s.push(p3);
    }
    report.verdicts.push(Verdict::check("p_eta_ge_2_non_increasing", non_increasing(&p2s), format!("{p2s:?}")));
    report.verdicts.push(Verdict::check("p_eta_ge_3_over_eps_non_increasing", non_increasing(&p3s), format!("{p3s:?}")));
    report.tables.push(table);
    Ok(report)
}

// ---------------------------------------------------------------- dump-paths

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpPathsParams {
    /// Starts at transverse offsets 0, spacing, 2·spacing, … on level 0 along e₁.
    pub count: usize,
    pub spacing: i64,
    pub height: f64,
}

impl Default for DumpPathsParams {
    fn default() -> Self {
        Self { count: 10, spacing: 2, height: 100.0 }
    }
}

pub fn dump_paths_experiment(f: &FieldParams, p: &DumpPathsParams) -> Result<Outcome> {
    let field = f.field(0, 0)?;
    let paths = (0..p.count as i64)
        .map(|i| {
            let mut c = vec![0i64; f.d];
            c[0] = i * p.spacing;
            crate::dsf::trace_path(&field, &lattice_point(&c), Stop::Height(p.height))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExperimentReport::new("dump-paths", params_json(f, p));
    let mut table = Table::new("paths", &["path", "vertices", "end_height"]);
    for (i, path) in paths.iter().enumerate() {
        table.push(&[i as f64, path.len() as f64, path.end_time()]);
    }
    report.tables.push(table);
    let mut buf = Vec::new();
    write_paths_ndjson(&mut buf, &paths)?;
    Ok(Outcome { report, dumps: vec![Dump { name: "paths".into(), ndjson: buf }] })
}
