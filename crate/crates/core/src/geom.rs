//! Small fixed-capacity vectors for points in R^d and sites in Z^d, d in {2, 3}.
//!
//! Both types store three coordinates and carry their dimension; unused
//! trailing coordinates are zero. The last *used* coordinate is the
//! vertical ("time") direction.

use std::cmp::Ordering;
use std::fmt;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DsfError, Result};

pub const MAX_DIM: usize = 3;

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(DsfError::invalid(format!("dimension must be 2 or 3, got {dim}")))
    }
}

/// A lattice site w in Z^d.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeSite {
    dim: u8,
    coords: [i64; MAX_DIM],
}

impl LatticeSite {
    pub fn new(coords: &[i64]) -> Result<Self> {
        check_dim(coords.len())?;
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { dim: coords.len() as u8, coords: c })
    }

    pub(crate) fn from_array(dim: usize, coords: [i64; MAX_DIM]) -> Self {
        Self { dim: dim as u8, coords }
    }

    pub fn origin(dim: usize) -> Self {
        Self { dim: dim as u8, coords: [0; MAX_DIM] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim()]
    }

    #[inline]
    pub(crate) fn raw(&self) -> [i64; MAX_DIM] {
        self.coords
    }

    #[inline]
    pub fn level(&self) -> i64 {
        self.coords[self.dim() - 1]
    }

    pub fn transverse(&self) -> &[i64] {
        &self.coords[..self.dim() - 1]
    }

    pub fn to_point(&self) -> Point {
        let mut c = [0.0; MAX_DIM];
        for (dst, src) in c.iter_mut().zip(self.coords) {
            *dst = src as f64;
        }
        Point { dim: self.dim, coords: c }
    }

    /// Site shifted by `delta` along axis `axis`.
    pub fn shifted(&self, axis: usize, delta: i64) -> Self {
        let mut s = *self;
        s.coords[axis] += delta;
        s
    }
}

impl fmt::Debug for LatticeSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Serialize for LatticeSite {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim()))?;
        for c in self.coords() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for LatticeSite {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(deserializer)?;
        LatticeSite::new(&v).map_err(serde::de::Error::custom)
    }
}

/// A point in R^d.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    dim: u8,
    coords: [f64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        check_dim(coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(DsfError::invalid("point coordinates must be finite"));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { dim: coords.len() as u8, coords: c })
    }

    pub(crate) fn from_array(dim: usize, coords: [f64; MAX_DIM]) -> Self {
        Self { dim: dim as u8, coords }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim: dim as u8, coords: [0.0; MAX_DIM] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    #[inline]
    pub(crate) fn raw(&self) -> [f64; MAX_DIM] {
        self.coords
    }

    /// The d-th (vertical) coordinate.
    #[inline]
    pub fn height(&self) -> f64 {
        self.coords[self.dim() - 1]
    }

    #[inline]
    pub fn transverse(&self) -> &[f64] {
        &self.coords[..self.dim() - 1]
    }

    /// Floor of the vertical coordinate: the lattice level the point sits on.
    #[inline]
    pub fn level(&self) -> i64 {
        self.height().floor() as i64
    }

    #[inline]
    pub fn l1(&self, other: &Point) -> f64 {
        self.coords.iter().zip(other.coords.iter()).take(self.dim()).map(|(a, b)| (a - b).abs()).sum()
    }

    /// L1 distance between the transverse projections.
    #[inline]
    pub fn transverse_l1(&self, other: &Point) -> f64 {
        self.coords.iter().zip(other.coords.iter()).take(self.dim() - 1).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Closest lattice site one level above: (round(x̄), ⌊x(d)⌋ + 1).
    pub fn up_site(&self) -> LatticeSite {
        let d = self.dim();
        let mut c = [0i64; MAX_DIM];
        for (dst, src) in c.iter_mut().zip(self.coords.iter()).take(d - 1) {
            *dst = src.round() as i64;
        }
        c[d - 1] = self.level() + 1;
        LatticeSite::from_array(d, c)
    }

    /// Lexicographic comparison of coordinates (total for finite values).
    pub fn lex_cmp(&self, other: &Point) -> Ordering {
        for (a, b) in self.coords().iter().zip(other.coords()) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim()))?;
        for c in self.coords() {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(deserializer)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

/// Closed axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Point,
    pub hi: Point,
}

impl AxisBox {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let lo = Point::new(lo)?;
        let hi = Point::new(hi)?;
        if lo.dim() != hi.dim() {
            return Err(DsfError::invalid("box corners differ in dimension"));
        }
        if lo.coords().iter().zip(hi.coords()).any(|(a, b)| a >= b) {
            return Err(DsfError::invalid("box is degenerate"));
        }
        Ok(Self { lo, hi })
    }

    /// The cube [-r, r]^d.
    pub fn centered(dim: usize, r: f64) -> Result<Self> {
        Self::new(&vec![-r; dim], &vec![r; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        p.coords().iter().zip(self.lo.coords().iter().zip(self.hi.coords())).all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }
}

/// Iterates every integer vector in the closed box `[lo, hi]` (first `dim` axes)
/// in lexicographic order.
pub(crate) fn for_each_site(dim: usize, lo: [i64; MAX_DIM], hi: [i64; MAX_DIM], mut f: impl FnMut(LatticeSite)) {
    if (0..dim).any(|k| lo[k] > hi[k]) {
        return;
    }
    let mut cur = lo;
    loop {
        f(LatticeSite::from_array(dim, cur));
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if cur[axis] < hi[axis] {
                cur[axis] += 1;
                break;
            }
            cur[axis] = lo[axis];
        }
    }
}
