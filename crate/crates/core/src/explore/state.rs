use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dsf::{h_step, search_radius};
use crate::error::{DsfError, Result};
use crate::field::{FieldConfig, SitePoint};
use crate::geom::{AxisBox, LatticeSite, Point, MAX_DIM};

use super::history::{HistoryRegion, UpperBall};

/// Default cap size δ of the target regions Δ = B^+(g↑, δ).
pub const DEFAULT_DELTA: f64 = 0.05;

/// m_d = ⌈R⌉ + 4 where R bounds a single h-step; 9 for d = 2 and 10 for d = 3 at ρ = 1.
pub fn default_m_d(dim: usize, half_width: f64) -> usize {
    search_radius(dim, half_width).ceil() as usize + 4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movers {
    U,
    V,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Basic,
    Up,
    SpecialUp,
}

impl StepKind {
    pub fn is_up(self) -> bool {
        self != StepKind::Basic
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub index: u64,
    pub movers: Movers,
    pub kind: StepKind,
    pub positions: Vec<SitePoint>,
    /// Whether A(g↑) held for every current position before the step.
    pub event_a: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreOptions {
    pub delta: f64,
    pub keep_log: bool,
    pub track_used: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, keep_log: true, track_used: true }
    }
}

impl ExploreOptions {
    /// No log and no Γ bookkeeping, for long Monte Carlo runs.
    pub fn lean(delta: f64) -> Self {
        Self { delta, keep_log: false, track_used: false }
    }
}

/// N(w): sites y with y(d) ≥ w(d) and ‖y − w‖∞ ≤ 1.
pub fn upper_neighbourhood(w: &LatticeSite) -> Vec<LatticeSite> {
    let dim = w.dim();
    let c = w.coords();
    let mut out = Vec::with_capacity(18);
    let (a_lo, a_hi) = (-1i64, 1i64);
    let (b_lo, b_hi) = if dim == 3 { (-1i64, 1i64) } else { (0, 0) };
    for dz in 0..=1i64 {
        for a in a_lo..=a_hi {
            for b in b_lo..=b_hi {
                let mut s = [0i64; MAX_DIM];
                s[0] = c[0] + a;
                if dim == 3 {
                    s[1] = c[1] + b;
                }
                s[dim - 1] = c[dim - 1] + dz;
                out.push(LatticeSite::new(&s[..dim]).unwrap());
            }
        }
    }
    out
}

#[inline]
fn in_cap(p: &Point, centre: &Point, delta: f64) -> bool {
    p.height() >= centre.height() && p.l1(centre) <= delta
}

/// Event A(w): every y ∈ N(w) has its point inside B^+(y, δ).
pub fn event_a(field: &FieldConfig, w: &LatticeSite, delta: f64) -> bool {
    // w itself first: it fails most often, so the scan usually stops at once
    let sp = field.point(w);
    if !in_cap(&sp.position, &w.to_point(), delta) {
        return false;
    }
    upper_neighbourhood(w).iter().all(|y| {
        let p = field.point(y);
        in_cap(&p.position, &y.to_point(), delta)
    })
}

/// Whether a landing point lies in Δ = B^+(g↑, δ) for the pre-step position.
pub fn lands_in_cap(before: &Point, after: &Point, delta: f64) -> bool {
    in_cap(after, &before.up_site().to_point(), delta)
}

/// Joint exploration of one or two DSF paths.
#[derive(Clone, Debug)]
pub struct ExplorationState {
    pub mode: Mode,
    pub positions: Vec<SitePoint>,
    pub coalesced: bool,
    pub history: HistoryRegion,
    /// Γ_n, when tracked.
    pub used_sites: HashSet<LatticeSite>,
    pub step_index: u64,
    pub log: Vec<StepEvent>,
    pub options: ExploreOptions,
}

impl ExplorationState {
    pub fn single(field: &FieldConfig, start: LatticeSite, options: ExploreOptions) -> Result<Self> {
        Self::build(field, Mode::Single, vec![SitePoint::at_site(start)], options)
    }

    /// Pair exploration from two lattice sites.
    pub fn pair(field: &FieldConfig, u: LatticeSite, v: LatticeSite, options: ExploreOptions) -> Result<Self> {
        Self::build(field, Mode::Pair, vec![SitePoint::at_site(u), SitePoint::at_site(v)], options)
    }

    fn build(field: &FieldConfig, mode: Mode, positions: Vec<SitePoint>, options: ExploreOptions) -> Result<Self> {
        if positions.iter().any(|p| p.site.dim() != field.dim()) {
            return Err(DsfError::invalid("start dimension does not match field"));
        }
        if !(options.delta > 0.0) {
            return Err(DsfError::invalid("delta must be positive"));
        }
        let coalesced = mode == Mode::Pair && positions[0] == positions[1];
        let baseline = positions.iter().map(|p| p.height()).fold(f64::INFINITY, f64::min);
        Ok(Self {
            mode,
            positions,
            coalesced,
            history: HistoryRegion::new(baseline),
            used_sites: HashSet::new(),
            step_index: 0,
            log: Vec::new(),
            options,
        })
    }

    pub fn u(&self) -> &SitePoint {
        &self.positions[0]
    }

    pub fn v(&self) -> Option<&SitePoint> {
        self.positions.get(1)
    }

    fn acts_single(&self) -> bool {
        self.mode == Mode::Single || self.coalesced
    }

    /// Advances one step of the joint exploration and returns its event.
    pub fn step(&mut self, field: &FieldConfig) -> StepEvent {
        let delta = self.options.delta;
        let before = self.positions.clone();
        let event_a_flag = if self.acts_single() {
            event_a(field, &before[0].position.up_site(), delta)
        } else {
            before.iter().all(|p| event_a(field, &p.position.up_site(), delta))
        };

        let mut moves: Vec<(Point, Point)> = Vec::with_capacity(2);
        let (movers, level_move) = if self.acts_single() {
            let next = h_step(field, &before[0].position);
            moves.push((before[0].position, next.position));
            for p in self.positions.iter_mut() {
                *p = next;
            }
            (if self.mode == Mode::Single { Movers::U } else { Movers::Both }, true)
        } else {
            let (gu, gv) = (before[0], before[1]);
            let (lu, lv) = (gu.position.level(), gv.position.level());
            if lu < lv {
                let next = h_step(field, &gu.position);
                moves.push((gu.position, next.position));
                self.positions[0] = next;
                (Movers::U, false)
            } else if lv < lu {
                let next = h_step(field, &gv.position);
                moves.push((gv.position, next.position));
                self.positions[1] = next;
                (Movers::V, false)
            } else {
                let hu = h_step(field, &gu.position);
                let hv = h_step(field, &gv.position);
                moves.push((gu.position, hu.position));
                moves.push((gv.position, hv.position));
                if hu == gv {
                    // u passes through g(v) and continues along v's step
                    self.positions = vec![hv, hv];
                } else if hv == gu {
                    self.positions = vec![hu, hu];
                } else {
                    self.positions = vec![hu, hv];
                }
                (Movers::Both, true)
            }
        };
        if self.mode == Mode::Pair && self.positions[0] == self.positions[1] {
            self.coalesced = true;
        }

        let up = level_move && before.iter().zip(&self.positions).all(|(b, a)| lands_in_cap(&b.position, &a.position, delta));
        let kind = match (up, event_a_flag) {
            (false, _) => StepKind::Basic,
            (true, false) => StepKind::Up,
            (true, true) => StepKind::SpecialUp,
        };

        let baseline = self.positions.iter().map(|p| p.height()).fold(f64::INFINITY, f64::min);
        self.history.update(&moves, baseline);
        if self.options.track_used {
            for p in &self.positions {
                self.used_sites.insert(p.site);
            }
        }
        self.step_index += 1;
        let ev = StepEvent { index: self.step_index, movers, kind, positions: self.positions.clone(), event_a: event_a_flag };
        if self.options.keep_log {
            self.log.push(ev.clone());
        }
        ev
    }
}

/// Functional form of [`ExplorationState::step`].
pub fn joint_step(state: &ExplorationState, field: &FieldConfig) -> ExplorationState {
    let mut next = state.clone();
    next.step(field);
    next
}

/// Step kind recomputed from the states around a step.
pub fn classify_step(before: &ExplorationState, after: &ExplorationState, field: &FieldConfig, delta: f64) -> StepKind {
    let single = before.mode == Mode::Single || before.coalesced;
    let level = single || before.positions[0].position.level() == before.positions[1].position.level();
    let n = if single { 1 } else { 2 };
    let up = level && (0..n).all(|i| lands_in_cap(&before.positions[i].position, &after.positions[i].position, delta));
    if !up {
        return StepKind::Basic;
    }
    if (0..n).all(|i| event_a(field, &before.positions[i].position.up_site(), delta)) {
        StepKind::SpecialUp
    } else {
        StepKind::Up
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    InteriorPoint { ball: UpperBall, point: SitePoint },
    ConeMeetsHistory { position: Point, ball: UpperBall },
    HeightExceeded { height: f64, bound: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Field points strictly inside a ball of `h` (clipped at its baseline).
pub fn interior_points(field: &FieldConfig, h: &HistoryRegion, ball: &UpperBall) -> Vec<SitePoint> {
    let dim = ball.apex.dim();
    let lo_h = ball.apex.height().max(h.baseline);
    if ball.top() <= lo_h {
        return Vec::new();
    }
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    for k in 0..dim - 1 {
        lo[k] = ball.apex.coords()[k] - ball.radius;
        hi[k] = ball.apex.coords()[k] + ball.radius;
    }
    lo[dim - 1] = lo_h;
    hi[dim - 1] = ball.top();
    let bx = AxisBox::new(&lo, &hi).expect("ball box is non-degenerate");
    field.points_in_box(&bx).expect("dimensions agree").into_iter().filter(|p| ball.interior_contains(&p.position, h.baseline)).collect()
}

/// Checks the exploration invariants: no field point inside H, no current
/// position's upward cone meets H, and L(H) ≤ m_d − 4.
pub fn verify_exploration_invariants(state: &ExplorationState, field: &FieldConfig, m_d: usize) -> InvariantReport {
    let mut report = InvariantReport::default();
    for ball in &state.history.balls {
        for point in interior_points(field, &state.history, ball) {
            report.violations.push(Violation::InteriorPoint { ball: *ball, point });
        }
        for p in &state.positions {
            if ball.meets_cone(&p.position) {
                report.violations.push(Violation::ConeMeetsHistory { position: p.position, ball: *ball });
            }
        }
    }
    let height = state.history.height();
    let bound = m_d as f64 - 4.0;
    if height > bound {
        report.violations.push(Violation::HeightExceeded { height, bound });
    }
    report
}
