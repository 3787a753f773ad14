//! The planar dual forest: dual vertices sit halfway between a primal vertex
//! and the nearest path on either side, and dual edges run downward.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dsf::{path_from_vertex, search_radius, DsfPath, Polyline, StepCache, Stop};
use crate::error::{DsfError, Result};
use crate::field::{FieldConfig, SitePoint};
use crate::geom::{AxisBox, LatticeSite, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// A path crossing level t: the edge ⟨from, h(from)⟩ with from(2) < t ≤ h(from)(2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub from: SitePoint,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DualVertex {
    pub position: Point,
    pub parent: SitePoint,
    pub side: Side,
}

impl DualVertex {
    pub fn key(&self) -> (LatticeSite, Side) {
        (self.parent.site, self.side)
    }

    pub fn height(&self) -> f64 {
        self.position.height()
    }

    pub fn x(&self) -> f64 {
        self.position.coords()[0]
    }
}

impl PartialEq for DualVertex {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for DualVertex {}

/// Lazy dual navigation over an infinite planar field, restricted to
/// columns inside `[lo − margin, hi + margin]`.
#[derive(Debug)]
pub struct DualContext<'a> {
    steps: StepCache<'a>,
    x_lo: f64,
    x_hi: f64,
    margin: f64,
    vertices: HashMap<(LatticeSite, Side), DualVertex>,
}

impl<'a> DualContext<'a> {
    pub fn new(field: &'a FieldConfig, window: &AxisBox, margin: f64) -> Result<Self> {
        if field.dim() != 2 || window.dim() != 2 {
            return Err(DsfError::invalid("the dual forest is defined for d = 2 only"));
        }
        if !(margin >= 0.0) {
            return Err(DsfError::invalid("margin must be non-negative"));
        }
        Ok(Self {
            steps: StepCache::new(field),
            x_lo: window.lo.coords()[0] - margin,
            x_hi: window.hi.coords()[0] + margin,
            margin,
            vertices: HashMap::new(),
        })
    }

    pub fn field(&self) -> &'a FieldConfig {
        self.steps.field()
    }

    pub fn h(&mut self, p: &SitePoint) -> SitePoint {
        self.steps.step(p)
    }

    /// Nearest path strictly on `side` of (y, s) among those started strictly before s.
    pub fn crossing(&mut self, y: f64, s: f64, side: Side) -> Result<Crossing> {
        let field = self.field();
        let rho = field.half_width();
        let reach = search_radius(2, rho);
        let k_lo = (s - reach - rho).ceil() as i64;
        let k_hi = (s + rho).ceil() as i64 - 1;
        let sign = if side == Side::Right { 1.0 } else { -1.0 };
        // edges from column c reach transverse values within rho + reach of c
        let mut c = if side == Side::Right { (y - reach - rho).floor() as i64 } else { (y + reach + rho).ceil() as i64 };
        let mut best: Option<Crossing> = None;
        let mut best_slope = 0.0;
        loop {
            let near = c as f64 - sign * (rho + reach);
            if let Some(b) = &best {
                if sign * (near - b.value) > 0.0 {
                    break;
                }
            }
            if (c as f64) < self.x_lo || (c as f64) > self.x_hi {
                return Err(DsfError::MarginExhausted { x: y, t: s, margin: self.margin });
            }
            for k in k_lo..=k_hi {
                let a = field.point(&LatticeSite::from_array(2, [c, k, 0]));
                if a.height() >= s {
                    continue;
                }
                let b = self.h(&a);
                if b.height() < s {
                    continue;
                }
                let (x0, t0) = (a.position.coords()[0], a.height());
                let (x1, t1) = (b.position.coords()[0], b.height());
                let slope = (x1 - x0) / (t1 - t0);
                let value = if t1 == s { x1 } else { x0 + (s - t0) / (t1 - t0) * (x1 - x0) };
                if sign * (value - y) <= 0.0 {
                    continue;
                }
                // Edges merging into a vertex at height s share its value; the
                // nearest one is the nearest just below s.
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        sign * (value - cur.value) < 0.0
                            || (value == cur.value
                                && (sign * (slope - best_slope) > 0.0
                                    || (slope == best_slope && a.position.lex_cmp(&cur.from.position).is_lt())))
                    }
                };
                if better {
                    best = Some(Crossing { from: a, value });
                    best_slope = slope;
                }
            }
            c += sign as i64;
        }
        Ok(best.expect("loop exits only with a candidate"))
    }

    /// r̂ or l̂ of a primal vertex.
    pub fn dual_vertex(&mut self, parent: &SitePoint, side: Side) -> Result<DualVertex> {
        if let Some(v) = self.vertices.get(&(parent.site, side)) {
            return Ok(*v);
        }
        let (x, t) = (parent.position.coords()[0], parent.height());
        let c = self.crossing(x, t, side)?;
        let v = DualVertex { position: Point::from_array(2, [(x + c.value) / 2.0, t, 0.0]), parent: *parent, side };
        self.vertices.insert((parent.site, side), v);
        Ok(v)
    }

    /// ĥ(y, s).
    pub fn dual_step(&mut self, v: &DualVertex) -> Result<DualVertex> {
        let (y, s) = (v.x(), v.height());
        let r = self.crossing(y, s, Side::Right)?;
        let l = self.crossing(y, s, Side::Left)?;
        if r.from.height() > l.from.height() {
            self.dual_vertex(&r.from, Side::Left)
        } else {
            self.dual_vertex(&l.from, Side::Right)
        }
    }

    /// Dual path from `v` down to the first vertex at or below `t_min`.
    pub fn trace_down(&mut self, v: &DualVertex, t_min: f64) -> Result<Vec<DualVertex>> {
        let mut out = vec![*v];
        let mut cur = *v;
        while cur.height() > t_min {
            cur = self.dual_step(&cur)?;
            out.push(cur);
        }
        Ok(out)
    }
}

/// The nearest path on `side` of (x, t) started strictly before t, traced up to `until`.
pub fn nearest_path(field: &FieldConfig, point: &Point, side: Side, window: &AxisBox, margin: f64, until: f64) -> Result<DsfPath> {
    let mut ctx = DualContext::new(field, window, margin)?;
    let c = ctx.crossing(point.coords()[0], point.height(), side)?;
    path_from_vertex(field, &c.from, Stop::Height(until.max(point.height())))
}

/// Finite-window dual forest.
#[derive(Clone, Debug, Serialize)]
pub struct DualForest {
    pub vertices: Vec<DualVertex>,
    /// ĥ for each entry of `vertices`, same order.
    pub next: Vec<DualVertex>,
    pub window: AxisBox,
    pub margin: f64,
}

impl DualForest {
    pub fn edges(&self) -> impl Iterator<Item = (&DualVertex, &DualVertex)> {
        self.vertices.iter().zip(&self.next)
    }

    /// Index of each vertex by identity.
    pub fn index(&self) -> HashMap<(LatticeSite, Side), usize> {
        self.vertices.iter().enumerate().map(|(i, v)| (v.key(), i)).collect()
    }

    /// Whether following edges from any vertex ever returns to it.
    pub fn has_cycle(&self) -> bool {
        let idx = self.index();
        // 0 = unseen, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.vertices.len()];
        for start in 0..self.vertices.len() {
            let mut stack = Vec::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    1 => return true,
                    2 => break,
                    _ => {}
                }
                state[i] = 1;
                stack.push(i);
                cur = idx.get(&self.next[i].key()).copied();
            }
            for i in stack {
                state[i] = 2;
            }
        }
        false
    }
}

/// r̂ and l̂ for every primal vertex in the window, with their dual edges.
pub fn build_dual(field: &FieldConfig, window: &AxisBox, margin: f64) -> Result<DualForest> {
    let mut ctx = DualContext::new(field, window, margin)?;
    let mut vertices = Vec::new();
    let mut next = Vec::new();
    for p in field.points_in_box(window)? {
        for side in [Side::Left, Side::Right] {
            let v = ctx.dual_vertex(&p, side)?;
            next.push(ctx.dual_step(&v)?);
            vertices.push(v);
        }
    }
    Ok(DualForest { vertices, next, window: *window, margin })
}

/// Proper intersection of two segments (shared endpoints and touching do not count).
fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn xy(p: &Point) -> [f64; 2] {
    [p.coords()[0], p.coords()[1]]
}

type Segment = ([f64; 2], [f64; 2]);

/// Number of (primal edge, dual edge) pairs that cross properly, for primal
/// edges out of the window's vertices.
pub fn primal_dual_crossings(field: &FieldConfig, forest: &DualForest) -> Result<usize> {
    const CELL: f64 = 4.0;
    let cell = |x: f64| (x / CELL).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<Segment>> = HashMap::new();
    let mut steps = StepCache::new(field);
    for a in field.points_in_box(&forest.window)? {
        let b = steps.step(&a);
        let (p, q) = (xy(&a.position), xy(&b.position));
        let mut seen = HashSet::new();
        for cx in cell(p[0].min(q[0]))..=cell(p[0].max(q[0])) {
            for cy in cell(p[1])..=cell(q[1]) {
                if seen.insert((cx, cy)) {
                    grid.entry((cx, cy)).or_default().push((p, q));
                }
            }
        }
    }
    let mut count = 0;
    for (v, w) in forest.edges() {
        let (p, q) = (xy(&v.position), xy(&w.position));
        let mut hits = HashSet::new();
        for cx in cell(p[0].min(q[0]))..=cell(p[0].max(q[0])) {
            for cy in cell(q[1])..=cell(p[1]) {
                for (a, b) in grid.get(&(cx, cy)).into_iter().flatten() {
                    if segments_cross(p, q, *a, *b) {
                        hits.insert((a[0].to_bits(), a[1].to_bits()));
                    }
                }
            }
        }
        count += hits.len();
    }
    Ok(count)
}

/// A dual path as a polyline over increasing time.
pub fn dual_polyline(path: &[DualVertex]) -> Result<Polyline> {
    let mut times: Vec<f64> = path.iter().rev().map(|v| v.height()).collect();
    let mut values: Vec<f64> = path.iter().rev().map(|v| v.x()).collect();
    times.dedup();
    values.truncate(times.len());
    let mut p = Polyline::new(times, values)?;
    p.keys = Some(
        path.iter()
            .rev()
            .map(|v| {
                let c = v.parent.site.coords();
                crate::field::mix64((c[0] as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (c[1] as u64) ^ ((v.side as u64) << 63))
            })
            .collect(),
    );
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiInfiniteProbe {
    /// Dual paths started in the top slab.
    pub started: usize,
    /// Those that reached the bottom of the window without leaving its sides.
    pub traversing: usize,
    /// Distinct dual vertices at which traversing paths leave the window: the
    /// number of dual components crossing the whole window.
    pub components: usize,
    pub multi_component: bool,
}

/// Traces every dual path born in the top `slab` of the window down through
/// the window and counts how many distinct components reach the bottom.
pub fn probe_bi_infinite(field: &FieldConfig, forest: &DualForest, slab: f64) -> Result<BiInfiniteProbe> {
    let idx = forest.index();
    let (lo, hi) = (forest.window.lo.coords(), forest.window.hi.coords());
    let (bottom, top) = (lo[1], hi[1]);
    let mut ctx = DualContext::new(field, &forest.window, forest.margin)?;
    let mut started = 0;
    let mut traversing = 0;
    let mut exits = HashSet::new();
    for (i, v) in forest.vertices.iter().enumerate() {
        if v.height() < top - slab {
            continue;
        }
        started += 1;
        let mut cur = i;
        loop {
            let w = forest.next[cur];
            if w.height() < bottom {
                traversing += 1;
                exits.insert(w.key());
                break;
            }
            if w.x() < lo[0] || w.x() > hi[0] {
                break;
            }
            match idx.get(&w.key()) {
                Some(j) => cur = *j,
                None => {
                    // vertex whose parent sits just outside the window box
                    let mut u = w;
                    while u.height() >= bottom && u.x() >= lo[0] && u.x() <= hi[0] {
                        u = ctx.dual_step(&u)?;
                    }
                    if u.height() < bottom {
                        traversing += 1;
                        exits.insert(u.key());
                    }
                    break;
                }
            }
        }
    }
    Ok(BiInfiniteProbe { started, traversing, components: exits.len(), multi_component: exits.len() >= 2 })
}

#[derive(Serialize)]
struct DualRecord<'a> {
    vertex: &'a DualVertex,
    next: &'a DualVertex,
}

/// One line per dual edge.
pub fn write_dual_ndjson<W: Write>(mut out: W, forest: &DualForest) -> Result<()> {
    for (vertex, next) in forest.edges() {
        serde_json::to_writer(&mut out, &DualRecord { vertex, next })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
