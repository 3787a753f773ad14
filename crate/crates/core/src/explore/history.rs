//! History regions: unions of upper L1 half-balls clipped above a baseline.

use serde::{Deserialize, Serialize};

use crate::error::{DsfError, Result};
use crate::geom::Point;

/// Slack used by every geometric test on history regions.
pub const GEOM_TOL: f64 = 1e-9;

/// B^+(apex, radius) = {y : ‖y − apex‖₁ ≤ radius, y(d) ≥ apex(d)}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBall {
    pub apex: Point,
    pub radius: f64,
}

impl UpperBall {
    pub fn new(apex: Point, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(DsfError::invalid(format!("ball radius must be finite and >= 0, got {radius}")));
        }
        Ok(Self { apex, radius })
    }

    /// Highest d-th coordinate reached by the ball.
    pub fn top(&self) -> f64 {
        self.apex.height() + self.radius
    }

    pub fn contains(&self, y: &Point) -> bool {
        self.radius > 0.0 && y.height() >= self.apex.height() && y.l1(&self.apex) <= self.radius
    }

    /// Whether `y` lies strictly inside the ball clipped to {y(d) ≥ baseline}.
    pub fn interior_contains(&self, y: &Point, baseline: f64) -> bool {
        y.height() > self.apex.height() + GEOM_TOL && y.height() > baseline + GEOM_TOL && y.l1(&self.apex) < self.radius - GEOM_TOL
    }

    /// Whether the open cone {y : y(d) − x(d) > ‖ȳ − x̄‖₁} meets the ball.
    ///
    /// Over the ball, ‖ȳ − x̄‖₁ − (y(d) − x(d)) is minimized at the top of the
    /// ball, where it equals ‖ā − x̄‖₁ + x(d) − a(d) − l.
    pub fn meets_cone(&self, x: &Point) -> bool {
        self.radius > 0.0 && self.apex.transverse_l1(x) + x.height() - self.top() < -GEOM_TOL
    }
}

/// H = (∪ B^+(x_i, l_i)) ∩ {y(d) ≥ baseline}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRegion {
    pub baseline: f64,
    pub balls: Vec<UpperBall>,
}

impl Default for HistoryRegion {
    fn default() -> Self {
        Self { baseline: f64::NEG_INFINITY, balls: Vec::new() }
    }
}

impl HistoryRegion {
    pub fn new(baseline: f64) -> Self {
        Self { baseline, balls: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn contains(&self, y: &Point) -> bool {
        y.height() >= self.baseline && self.balls.iter().any(|b| b.contains(y))
    }

    /// Adds B^+(from, ‖to − from‖₁) for every move, then raises the baseline
    /// and drops balls lying entirely below it.
    pub fn update(&mut self, moves: &[(Point, Point)], new_baseline: f64) {
        for (from, to) in moves {
            debug_assert!(to.height() > from.height());
            let radius = to.l1(from);
            if radius > 0.0 {
                self.balls.push(UpperBall { apex: *from, radius });
            }
        }
        self.baseline = new_baseline;
        let base = self.baseline;
        self.balls.retain(|b| b.top() >= base);
    }

    /// L(H) = sup{x₁(d) − x₂(d) : x₁, x₂ ∈ H}; 0 for the empty set.
    pub fn height(&self) -> f64 {
        let mut top = f64::NEG_INFINITY;
        let mut bottom = f64::INFINITY;
        for b in self.balls.iter().filter(|b| b.radius > 0.0 && b.top() >= self.baseline) {
            top = top.max(b.top());
            bottom = bottom.min(b.apex.height().max(self.baseline));
        }
        if top == f64::NEG_INFINITY {
            0.0
        } else {
            top - bottom
        }
    }
}

/// Functional form of [`HistoryRegion::update`].
pub fn update_history(h: &HistoryRegion, moves: &[(Point, Point)], new_baseline: f64) -> HistoryRegion {
    let mut out = h.clone();
    out.update(moves, new_baseline);
    out
}

pub fn history_height(h: &HistoryRegion) -> f64 {
    h.height()
}
