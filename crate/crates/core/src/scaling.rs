//! Diffusive rescaling of planar paths, the path-space metric d_Π, the
//! induced Hausdorff distance, and the η counting statistic.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsf::{h_step, path_value, search_radius, trace_path, Polyline, Stop};
use crate::error::{DsfError, Result};
use crate::explore::{run_with_renewals, ExplorationState, ExploreOptions};
use crate::field::{derive_seed, FieldConfig, SitePoint};
use crate::geom::{LatticeSite, Point};

/// Certified accuracy of [`d_pi`].
pub const D_PI_TOL: f64 = 1e-6;
/// sup |tanh″| = 4/(3√3).
const TANH_D2_MAX: f64 = 0.769_800_358_919_501;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// t ↦ source(n²γt)/(nσ), stored as an already-rescaled polyline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaledPath {
    pub path: Polyline,
    pub n: u32,
    pub gamma: f64,
    pub sigma: f64,
    pub direction: Direction,
}

impl ScaledPath {
    /// Rescaled starting time: the bottom of a forward path, the top of a backward one.
    pub fn start(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.path.start(),
            Direction::Backward => self.path.end(),
        }
    }

    /// Value on the traced range.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.path.eval(t).ok_or_else(|| DsfError::Domain(format!("t = {t} outside [{}, {}]", self.path.start(), self.path.end())))
    }

    /// Forward view: backward paths are reflected in time.
    fn forward(&self) -> Polyline {
        match self.direction {
            Direction::Forward => self.path.clone(),
            Direction::Backward => Polyline {
                times: self.path.times.iter().rev().map(|t| -t).collect(),
                values: self.path.values.iter().rev().copied().collect(),
                keys: self.path.keys.as_ref().map(|k| k.iter().rev().copied().collect()),
            },
        }
    }
}

pub fn scale_path(source: &Polyline, n: u32, gamma: f64, sigma: f64, direction: Direction) -> Result<ScaledPath> {
    if n == 0 || !(gamma > 0.0) || !(sigma > 0.0) {
        return Err(DsfError::invalid("scaling needs n >= 1, gamma > 0, sigma > 0"));
    }
    let tscale = (n as f64) * (n as f64) * gamma;
    let xscale = n as f64 * sigma;
    let times: Vec<f64> = source.times.iter().map(|t| t / tscale).collect();
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DsfError::invalid("rescaled times collapsed; scale too large for this path"));
    }
    Ok(ScaledPath {
        path: Polyline { times, values: source.values.iter().map(|x| x / xscale).collect(), keys: source.keys.clone() },
        n,
        gamma,
        sigma,
        direction,
    })
}

/// d_Π(p1, p2) = |tanh σ₁ − tanh σ₂| ∨ sup_{t ≥ σ₁∧σ₂} |tanh p1(t∨σ₁) − tanh p2(t∨σ₂)| / (1+|t|).
///
/// Paths are held at their end values beyond the traced range. The sup is
/// found by branch and bound with first and second order bounds on each piece, so the
/// returned value is within [`D_PI_TOL`] below the true supremum.
pub fn d_pi(p1: &ScaledPath, p2: &ScaledPath) -> Result<f64> {
    if p1.direction != p2.direction {
        return Err(DsfError::invalid("d_pi needs paths of the same direction"));
    }
    let (a, b) = (p1.forward(), p2.forward());
    Ok(d_pi_forward(&a, &b))
}

fn d_pi_forward(a: &Polyline, b: &Polyline) -> f64 {
    let (s1, s2) = (a.start(), b.start());
    let head = (s1.tanh() - s2.tanh()).abs();
    let lo = s1.min(s2);
    let hi = a.end().max(b.end()).max(0.0).max(lo);
    let g = |t: f64| {
        let x = a.eval_clamped(t.max(s1));
        let y = b.eval_clamped(t.max(s2));
        ((x.tanh() - y.tanh()).abs() / (1.0 + t.abs()), x, y)
    };

    let mut knots: Vec<f64> =
        a.times.iter().chain(&b.times).copied().chain([lo, hi, s1, s2, 0.0]).filter(|t| (lo..=hi).contains(t)).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut best = knots.iter().map(|t| g(*t).0).fold(head, f64::max);
    let mut stack: Vec<(f64, f64)> = knots.windows(2).map(|w| (w[0], w[1])).collect();
    while let Some((l, r)) = stack.pop() {
        let (gl, xl, yl) = g(l);
        let (gr, xr, yr) = g(r);
        let width = r - l;
        if width <= 0.0 {
            continue;
        }
        // no knot lies strictly inside, so both paths are affine on [l, r]
        let slope = ((xr - xl).abs() + (yr - yl).abs()) / width;
        let w_max = 1.0 / (1.0 + l.abs().min(r.abs()));
        let hl = gl * (1.0 + l.abs());
        let hr = gr * (1.0 + r.abs());
        let h_max = ((hl + hr) / 2.0 + slope * width / 2.0).min(2.0);
        let lip = slope * w_max + h_max * w_max * w_max;
        // f = (tanh x − tanh y)/(1+|t|) is smooth here, so it stays within
        // M w²/8 of its chord, with M bounding |f''|
        let (a, b) = (((xr - xl) / width).abs(), ((yr - yl) / width).abs());
        let m2 = TANH_D2_MAX * (a * a + b * b) * w_max + 2.0 * (a + b) * w_max * w_max + 2.0 * h_max * w_max.powi(3);
        let bound = ((gl + gr) / 2.0 + lip * width / 2.0).min(gl.max(gr) + m2 * width * width / 8.0);
        if bound <= best + D_PI_TOL {
            continue;
        }
        let m = l + width / 2.0;
        if m <= l || m >= r {
            continue;
        }
        best = best.max(g(m).0);
        stack.push((l, m));
        stack.push((m, r));
    }
    best
}

/// Finite family of scaled paths sharing a direction.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PathFamily {
    pub paths: Vec<ScaledPath>,
}

impl PathFamily {
    pub fn new(paths: Vec<ScaledPath>) -> Result<Self> {
        if let Some(first) = paths.first() {
            if paths.iter().any(|p| (p.n, p.gamma, p.sigma, p.direction) != (first.n, first.gamma, first.sigma, first.direction)) {
                return Err(DsfError::invalid("family members must share n, gamma, sigma and direction"));
            }
        }
        Ok(Self { paths })
    }
}

/// Hausdorff distance between families under d_Π.
pub fn d_hausdorff(k1: &PathFamily, k2: &PathFamily) -> Result<f64> {
    if k1.paths.is_empty() || k2.paths.is_empty() {
        return Err(DsfError::invalid("Hausdorff distance needs non-empty families"));
    }
    let one_sided = |a: &PathFamily, b: &PathFamily| -> Result<f64> {
        let mut sup: f64 = 0.0;
        for p in &a.paths {
            let mut inf = f64::INFINITY;
            for q in &b.paths {
                inf = inf.min(d_pi(p, q)?);
            }
            sup = sup.max(inf);
        }
        Ok(sup)
    };
    Ok(one_sided(k1, k2)?.max(one_sided(k2, k1)?))
}

#[derive(Hash, PartialEq, Eq)]
enum PosKey {
    Segment(u64, u64),
    Value(u64),
}

/// η(t0, t; a, b): distinct positions at time t0 + t of the paths born at or
/// before t0 that pass through [a, b] at time t0.
///
/// Paths carrying vertex keys are identified by the segment they occupy, so
/// merged paths count once even if their float values were computed apart.
pub fn eta_count(family: &PathFamily, t0: f64, t: f64, a: f64, b: f64) -> Result<usize> {
    if !(t > 0.0) || !(a < b) {
        return Err(DsfError::invalid("eta needs t > 0 and a < b"));
    }
    let mut seen = HashSet::new();
    for p in &family.paths {
        let f = p.forward();
        if f.start() > t0 || f.end() < t0 {
            continue;
        }
        let x = f.eval_clamped(t0);
        if x < a || x > b {
            continue;
        }
        let at = t0 + t;
        let key = match f.segment_key(at) {
            Some((k1, k2)) => PosKey::Segment(k1, k2),
            None => PosKey::Value(f.eval_clamped(at).to_bits()),
        };
        seen.insert(key);
    }
    Ok(seen.len())
}

/// Edges ⟨p, h(p)⟩ of the planar forest with p(2) < s ≤ h(p)(2) whose crossing
/// value at height `s` lies in [lo, hi], sorted by that value.
pub fn level_crossings(field: &FieldConfig, s: f64, lo: f64, hi: f64) -> Result<Vec<(SitePoint, SitePoint, f64)>> {
    if field.dim() != 2 {
        return Err(DsfError::invalid("level crossings are defined for d = 2"));
    }
    if !(lo <= hi) || !s.is_finite() {
        return Err(DsfError::invalid("need a finite level and lo <= hi"));
    }
    // an h-step never covers more than the search radius
    let reach = search_radius(2, field.half_width()) + field.half_width() + 1.0;
    let mut out = Vec::new();
    for level in (s - reach).floor() as i64..=(s + field.half_width()).ceil() as i64 {
        for col in (lo - reach).floor() as i64..=(hi + reach).ceil() as i64 {
            let p = field.point(&LatticeSite::new(&[col, level])?);
            if p.height() >= s {
                continue;
            }
            let q = h_step(field, &p.position);
            if q.height() < s {
                continue;
            }
            let (t0, t1) = (p.height(), q.height());
            let (x0, x1) = (p.position.coords()[0], q.position.coords()[0]);
            let x = x0 + (s - t0) / (t1 - t0) * (x1 - x0);
            if (lo..=hi).contains(&x) {
                out.push((p, q, x));
            }
        }
    }
    out.sort_by(|a, b| a.2.total_cmp(&b.2));
    Ok(out)
}

/// Estimates with normal-theory 95% intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSigma {
    pub gamma: f64,
    pub sigma: f64,
    pub gamma_ci: (f64, f64),
    pub sigma_ci: (f64, f64),
    pub trials: usize,
    /// Trials discarded for lack of renewals within the budget.
    pub shortfall: usize,
    pub method: String,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn sigma_interval(var: f64, n: usize) -> (f64, f64) {
    let half = 1.96 * var * (2.0 / (n as f64 - 1.0)).sqrt();
    ((var - half).max(0.0).sqrt(), (var + half).sqrt())
}

/// Samples behind [`estimate_gamma_sigma`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RenewalBlocks {
    /// First transverse coordinate of Y_2 per usable trial.
    pub y: Vec<f64>,
    /// Vertical hat-site increment between τ_1 and τ_2 per usable trial.
    pub rise: Vec<f64>,
    pub shortfall: usize,
}

/// Runs `trials` fresh single explorations from the origin and collects the
/// block between the first two renewals.
pub fn renewal_blocks(dim: usize, half_width: f64, seed: u64, trials: usize, budget: u64, m_d: usize, delta: f64) -> Result<RenewalBlocks> {
    let runs: Vec<Result<Option<(f64, f64)>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let field = FieldConfig::new(dim, derive_seed(seed, 0x6A, i as u64))?.with_half_width(half_width)?;
            let mut st = ExplorationState::single(&field, LatticeSite::origin(dim), ExploreOptions::lean(delta))?;
            let run = run_with_renewals(&mut st, &field, m_d, budget, 2)?;
            if run.records.len() < 2 {
                return Ok(None);
            }
            let (r1, r2) = (&run.records[0], &run.records[1]);
            let y = r2.y.as_ref().expect("second record has an increment")[0] as f64;
            Ok(Some((y, (r2.hat_sites[0].level() - r1.hat_sites[0].level()) as f64)))
        })
        .collect();
    let mut out = RenewalBlocks::default();
    for r in runs {
        match r? {
            Some((y, rise)) => {
                out.y.push(y);
                out.rise.push(rise);
            }
            None => out.shortfall += 1,
        }
    }
    Ok(out)
}

/// γ̂ = mean rise between the first two renewals, σ̂² = sample variance of Y_2(1).
#[allow(clippy::too_many_arguments)]
pub fn estimate_gamma_sigma(
    dim: usize,
    half_width: f64,
    seed: u64,
    trials: usize,
    budget: u64,
    m_d: usize,
    delta: f64,
) -> Result<(GammaSigma, RenewalBlocks)> {
    if trials < 30 {
        return Err(DsfError::invalid("estimate_gamma_sigma needs at least 30 trials"));
    }
    let blocks = renewal_blocks(dim, half_width, seed, trials, budget, m_d, delta)?;
    let used = blocks.y.len();
    let est = if used < 2 {
        GammaSigma {
            gamma: f64::NAN,
            sigma: f64::NAN,
            gamma_ci: (f64::NAN, f64::NAN),
            sigma_ci: (f64::NAN, f64::NAN),
            trials: used,
            shortfall: blocks.shortfall,
            method: "renewal".into(),
        }
    } else {
        let (g, gv) = mean_var(&blocks.rise);
        let (_, yv) = mean_var(&blocks.y);
        let gh = 1.96 * (gv / used as f64).sqrt();
        GammaSigma {
            gamma: g,
            sigma: yv.sqrt(),
            gamma_ci: (g - gh, g + gh),
            sigma_ci: sigma_interval(yv, used),
            trials: used,
            shortfall: blocks.shortfall,
            method: "renewal".into(),
        }
    };
    Ok((est, blocks))
}

/// Renewal-free fallback: γ = 1 (time is height) and σ̂² = Var π⁰(H) / H over
/// independent fields.
pub fn estimate_diffusivity(half_width: f64, seed: u64, trials: usize, height: f64) -> Result<GammaSigma> {
    if trials < 30 || !(height > 0.0) {
        return Err(DsfError::invalid("diffusivity estimate needs >= 30 trials and a positive height"));
    }
    let xs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let field = FieldConfig::new(2, derive_seed(seed, 0xD1F, i as u64))?.with_half_width(half_width)?;
            origin_path_value(&field, height)
        })
        .collect::<Result<_>>()?;
    let (_, v) = mean_var(&xs);
    let var = v / height;
    let (lo, hi) = sigma_interval(var, trials);
    Ok(GammaSigma {
        gamma: 1.0,
        sigma: var.sqrt(),
        gamma_ci: (1.0, 1.0),
        sigma_ci: (lo, hi),
        trials,
        shortfall: 0,
        method: "diffusive".into(),
    })
}

/// The planar path from the origin (including the origin itself) up to `height`.
pub fn origin_path(field: &FieldConfig, height: f64) -> Result<Polyline> {
    let p = trace_path(field, &Point::zero(2), Stop::Height(height))?;
    let mut line = p.polyline()?;
    line.times.insert(0, 0.0);
    line.values.insert(0, 0.0);
    if let Some(k) = line.keys.as_mut() {
        k.insert(0, u64::MAX);
    }
    Ok(line)
}

/// π⁰(height).
pub fn origin_path_value(field: &FieldConfig, height: f64) -> Result<f64> {
    let p = trace_path(field, &Point::zero(2), Stop::Height(height))?;
    if p.start_time() >= height {
        // first step already above: interpolate from the origin
        let v = &p.vertices[0];
        return Ok(height / v.height() * v.position.coords()[0]);
    }
    Ok(path_value(&p, height)?[0])
}
