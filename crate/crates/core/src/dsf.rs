//! Navigation in the directed spanning forest: the h-step, traced paths and
//! finite-window edge lists.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{DsfError, Result};
use crate::field::{FieldConfig, SitePoint};
use crate::geom::{AxisBox, LatticeSite, Point, MAX_DIM};

/// L1 radius around any x ∈ R^d that is guaranteed to contain h(x).
///
/// The site (round(x̄), ⌊x(d)⌋ + 1 + ⌈ρ⌉) always carries a point strictly
/// above x; its distance is at most (d-1)(1/2 + ρ) + 1 + ⌈ρ⌉ + ρ, which is
/// 1.5(d-1) + 3 for ρ = 1.
pub fn search_radius(dim: usize, half_width: f64) -> f64 {
    (dim - 1) as f64 * (0.5 + half_width) + 1.0 + half_width.ceil() + half_width
}

#[inline]
fn better(x: &Point, cand: &SitePoint, dist: f64, best: &Option<(f64, SitePoint)>) -> bool {
    if cand.position.height() <= x.height() {
        return false;
    }
    match best {
        None => true,
        Some((bd, bp)) => dist < *bd || (dist == *bd && cand.position.lex_cmp(&bp.position) == Ordering::Less),
    }
}

/// h(x): the field point nearest to x in L1 among those with strictly larger
/// d-th coordinate. Ties (only possible in synthetic fields) go to the
/// lexicographically smallest position.
///
/// # Panics
/// If `x` does not have the field's dimension.
pub fn h_step(field: &FieldConfig, x: &Point) -> SitePoint {
    assert_eq!(x.dim(), field.dim(), "point dimension does not match field");
    let dim = field.dim();
    let rho = field.half_width();
    let xc = x.raw();
    let xh = x.height();
    let mut best: Option<(f64, SitePoint)> = None;

    let consider = |w: &LatticeSite, best: &mut Option<(f64, SitePoint)>| {
        let p = field.point(w);
        let dist = p.position.l1(x);
        if better(x, &p, dist, best) {
            *best = Some((dist, p));
        }
    };

    // Cheap incumbents: the sites right above x, then the guaranteed one.
    let up = x.up_site();
    consider(&up, &mut best);
    consider(&up.shifted(dim - 1, 1), &mut best);
    consider(&up.shifted(dim - 1, rho.ceil() as i64), &mut best);
    let mut radius = best.as_ref().map(|b| b.0).expect("guaranteed candidate exists");

    let mut level = (xh - rho).floor() as i64 + 1;
    loop {
        let vlb = (level as f64 - rho - xh).max(0.0);
        if vlb > radius {
            break;
        }
        let slack = radius - vlb + rho;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..dim - 1 {
            lo[k] = (xc[k] - slack).ceil() as i64;
            hi[k] = (xc[k] + slack).floor() as i64;
        }
        lo[dim - 1] = level;
        hi[dim - 1] = level;
        let mut cur = lo;
        'sites: loop {
            let mut lb = vlb;
            for k in 0..dim - 1 {
                lb += ((cur[k] as f64 - xc[k]).abs() - rho).max(0.0);
            }
            if lb <= radius {
                consider(&LatticeSite::from_array(dim, cur), &mut best);
                radius = best.as_ref().map(|b| b.0).unwrap();
            }
            // advance the transverse odometer
            let mut axis = dim - 1;
            loop {
                if axis == 0 {
                    break 'sites;
                }
                axis -= 1;
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
            }
        }
        level += 1;
    }
    best.unwrap().1
}

/// h-step for field vertices, memoized by lattice site.
#[derive(Debug)]
pub struct StepCache<'a> {
    field: &'a FieldConfig,
    next: HashMap<LatticeSite, SitePoint>,
}

impl<'a> StepCache<'a> {
    pub fn new(field: &'a FieldConfig) -> Self {
        Self { field, next: HashMap::new() }
    }

    pub fn field(&self) -> &'a FieldConfig {
        self.field
    }

    pub fn step(&mut self, p: &SitePoint) -> SitePoint {
        let field = self.field;
        *self.next.entry(p.site).or_insert_with(|| h_step(field, &p.position))
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }
}

/// When [`trace_path`] stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stop {
    /// After this many h-steps.
    Steps(usize),
    /// At the first vertex whose d-th coordinate reaches this height.
    Height(f64),
}

/// A DSF path: successive h-steps joined linearly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DsfPath {
    pub vertices: Vec<SitePoint>,
}

impl DsfPath {
    pub fn dim(&self) -> usize {
        self.vertices.first().map_or(0, |v| v.position.dim())
    }

    /// σ_π, the height of the first vertex.
    pub fn start_time(&self) -> f64 {
        self.vertices[0].height()
    }

    pub fn end_time(&self) -> f64 {
        self.vertices.last().unwrap().height()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Transverse coordinate(s) at height `t`, linearly interpolated.
    pub fn value(&self, t: f64) -> Result<Vec<f64>> {
        path_value(self, t)
    }

    /// The planar path as a polyline (d = 2 only).
    pub fn polyline(&self) -> Result<Polyline> {
        if self.dim() != 2 {
            return Err(DsfError::invalid("polylines are defined for d = 2 paths"));
        }
        Ok(Polyline {
            times: self.vertices.iter().map(|v| v.height()).collect(),
            values: self.vertices.iter().map(|v| v.position.coords()[0]).collect(),
            keys: Some(self.vertices.iter().map(site_key).collect()),
        })
    }
}

/// Identity key of a field vertex (its lattice site).
pub fn site_key(p: &SitePoint) -> u64 {
    let c = p.site.raw();
    crate::field::mix64(crate::field::mix64(c[0] as u64 ^ 0x51) ^ (c[1] as u64).wrapping_mul(0x9E37_79B9) ^ (c[2] as u64).rotate_left(29))
}

/// Follows h from `start`. The start itself is not a vertex of the result.
pub fn trace_path(field: &FieldConfig, start: &Point, stop: Stop) -> Result<DsfPath> {
    match stop {
        Stop::Steps(0) => return Err(DsfError::invalid("step count must be positive")),
        Stop::Height(h) if !h.is_finite() => return Err(DsfError::invalid("stop height must be finite")),
        _ => {}
    }
    if start.dim() != field.dim() {
        return Err(DsfError::invalid("start dimension does not match field"));
    }
    let mut vertices = Vec::new();
    let mut cur = *start;
    loop {
        let next = h_step(field, &cur);
        vertices.push(next);
        cur = next.position;
        let done = match stop {
            Stop::Steps(n) => vertices.len() >= n,
            Stop::Height(h) => cur.height() >= h,
        };
        if done {
            break;
        }
    }
    Ok(DsfPath { vertices })
}

/// π^x for a field vertex x: x itself followed by h(x), h²(x), …
pub fn path_from_vertex(field: &FieldConfig, x: &SitePoint, stop: Stop) -> Result<DsfPath> {
    let mut path = trace_path(field, &x.position, stop)?;
    path.vertices.insert(0, *x);
    Ok(path)
}

/// Transverse coordinates of the path at height `t`.
pub fn path_value(path: &DsfPath, t: f64) -> Result<Vec<f64>> {
    if path.is_empty() {
        return Err(DsfError::Domain("empty path".into()));
    }
    let start = path.start_time();
    let end = path.end_time();
    if t < start {
        return Err(DsfError::Domain(format!("t = {t} is below the starting time {start}")));
    }
    if t > end {
        return Err(DsfError::Domain(format!("t = {t} is beyond the traced end {end}")));
    }
    let i = path.vertices.partition_point(|v| v.height() < t);
    let b = &path.vertices[i];
    if b.height() == t || i == 0 {
        return Ok(b.position.transverse().to_vec());
    }
    let a = &path.vertices[i - 1];
    let lambda = (t - a.height()) / (b.height() - a.height());
    Ok(a.position.transverse().iter().zip(b.position.transverse()).map(|(x, y)| x + lambda * (y - x)).collect())
}

/// Edges ⟨x, h(x)⟩ for every field point x in the window.
pub fn build_forest(field: &FieldConfig, window: &AxisBox) -> Result<Vec<(SitePoint, SitePoint)>> {
    Ok(field.points_in_box(window)?.into_iter().map(|x| (x, h_step(field, &x.position))).collect())
}

/// A planar path t ↦ x(t) given by breakpoints with strictly increasing times.
///
/// `keys` optionally carries vertex identities so that merged paths can be
/// recognized exactly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Polyline {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub keys: Option<Vec<u64>>,
}

impl Polyline {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(DsfError::invalid("polyline needs matching, non-empty time and value lists"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DsfError::invalid("polyline times must increase strictly"));
        }
        Ok(Self { times, values, keys: None })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Value at `t`, holding the end values outside the traced range.
    pub fn eval_clamped(&self, t: f64) -> f64 {
        if t <= self.start() {
            return self.values[0];
        }
        if t >= self.end() {
            return *self.values.last().unwrap();
        }
        let i = self.times.partition_point(|s| *s < t);
        if self.times[i] == t {
            return self.values[i];
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (x0, x1) = (self.values[i - 1], self.values[i]);
        x0 + (t - t0) / (t1 - t0) * (x1 - x0)
    }

    /// Value at `t` if inside the traced range.
    pub fn eval(&self, t: f64) -> Option<f64> {
        (self.start() <= t && t <= self.end()).then(|| self.eval_clamped(t))
    }

    /// Identity of the segment covering `t`: the keys of its endpoints.
    pub fn segment_key(&self, t: f64) -> Option<(u64, u64)> {
        let keys = self.keys.as_ref()?;
        if t < self.start() || t > self.end() {
            return None;
        }
        let i = self.times.partition_point(|s| *s < t);
        if self.times[i] == t {
            Some((keys[i], keys[i]))
        } else {
            Some((keys[i - 1], keys[i]))
        }
    }
}

/// Whether two planar paths cross: (π₁ − π₂) takes both signs at some pair
/// of breakpoint times in their common domain.
pub fn paths_cross(a: &Polyline, b: &Polyline) -> bool {
    let lo = a.start().max(b.start());
    let hi = a.end().min(b.end());
    if lo > hi {
        return false;
    }
    let (mut pos, mut neg) = (false, false);
    let mut check = |t: f64| {
        let d = a.eval_clamped(t) - b.eval_clamped(t);
        pos |= d > 0.0;
        neg |= d < 0.0;
    };
    check(lo);
    check(hi);
    for t in a.times.iter().chain(&b.times).copied().filter(|t| lo < *t && *t < hi) {
        check(t);
    }
    pos && neg
}

#[derive(Serialize)]
struct VertexRecord<'a> {
    path: usize,
    k: usize,
    #[serde(flatten)]
    vertex: &'a SitePoint,
}

/// Writes paths as NDJSON, one vertex per line, consecutive lines per path.
pub fn write_paths_ndjson<W: Write>(mut out: W, paths: &[DsfPath]) -> Result<()> {
    for (path, p) in paths.iter().enumerate() {
        for (k, vertex) in p.vertices.iter().enumerate() {
            serde_json::to_writer(&mut out, &VertexRecord { path, k, vertex })?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Outcome of [`coalesce_paths`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coalescence {
    /// Heights of the vertices at which two groups of paths met, in order.
    pub merges: Vec<f64>,
    /// Height at which the last groups met, once every path has merged.
    pub all_merged: Option<f64>,
    pub steps: u64,
}

/// Follows the paths from `starts`, always advancing the lowest one, until
/// they have all merged or every surviving path has reached `max_height`.
///
/// Two paths merge at the first vertex they share. Identical starts merge at
/// their own height.
pub fn coalesce_paths(field: &FieldConfig, starts: &[Point], max_height: f64) -> Result<Coalescence> {
    if starts.is_empty() {
        return Err(DsfError::invalid("need at least one start"));
    }
    if starts.iter().any(|s| s.dim() != field.dim()) {
        return Err(DsfError::invalid("start dimension does not match field"));
    }
    let mut merges = Vec::new();
    let mut live: Vec<(usize, Point)> = Vec::new();
    for (i, s) in starts.iter().enumerate() {
        if live.iter().any(|(_, p)| p == s) {
            merges.push(s.height());
        } else {
            live.push((i, *s));
        }
    }
    // absorbed[i] = i for live walkers, else the walker that took over
    let mut absorbed: Vec<usize> = (0..starts.len()).collect();
    let mut owner: HashMap<LatticeSite, usize> = HashMap::new();
    let mut steps = 0;
    while live.len() > 1 {
        let (slot, _) = live.iter().enumerate().min_by(|a, b| a.1 .1.height().total_cmp(&b.1 .1.height())).unwrap();
        let (me, pos) = live[slot];
        if pos.height() >= max_height {
            break;
        }
        let next = h_step(field, &pos);
        steps += 1;
        let root = owner.get(&next.site).map(|o| {
            let mut r = *o;
            while absorbed[r] != r {
                r = absorbed[r];
            }
            r
        });
        match root {
            Some(other) if other != me => {
                merges.push(next.height());
                absorbed[me] = other;
                live.swap_remove(slot);
            }
            _ => {
                owner.insert(next.site, me);
                live[slot].1 = next.position;
            }
        }
    }
    let all_merged = (live.len() == 1).then(|| merges.last().copied().unwrap_or(starts[0].height()));
    Ok(Coalescence { merges, all_merged, steps })
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;
    use crate::geom::for_each_site;

    /// Exhaustive argmin over every site in a cube of half-side `r` around x.
    pub fn h_step_brute(field: &FieldConfig, x: &Point, r: i64) -> SitePoint {
        let dim = field.dim();
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..dim {
            let c = x.coords()[k].floor() as i64;
            lo[k] = c - r;
            hi[k] = c + r;
        }
        let mut best: Option<(f64, SitePoint)> = None;
        for_each_site(dim, lo, hi, |w| {
            let p = field.point(&w);
            let d = p.position.l1(x);
            if better(x, &p, d, &best) {
                best = Some((d, p));
            }
        });
        best.unwrap().1
    }
}
