//! The perturbed lattice V = {w + U_w : w ∈ Z^d}.
//!
//! Offsets are never stored. Each U_w is recomputed on demand from a keyed
//! 64-bit mix of (seed, w, component), which makes the field infinite,
//! reproducible and free to share between threads.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DsfError, Result};
use crate::geom::{check_dim, for_each_site, AxisBox, LatticeSite, Point, MAX_DIM};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const AXIS_KEYS: [u64; MAX_DIM] = [0xD1B5_4A32_D192_ED03, 0xABC9_8388_FB8F_AC03, 0x8CB9_2BA7_2F3D_8DD7];

/// splitmix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for `(stream, index)`; used to give every trial its own field.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(base ^ GOLDEN).wrapping_add(stream.wrapping_mul(GOLDEN)) ^ mix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

#[inline]
fn unit_uniform(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Hashed offset of `site`, uniform on [-rho, rho)^d.
#[inline]
fn hashed_offset(seed: u64, rho: f64, site: &LatticeSite) -> [f64; MAX_DIM] {
    let raw = site.raw();
    let mut key = mix64(seed ^ GOLDEN);
    for (c, k) in raw.iter().zip(AXIS_KEYS).take(site.dim()) {
        key = mix64(key ^ (*c as u64).wrapping_mul(k));
    }
    let mut out = [0.0; MAX_DIM];
    for (i, o) in out.iter_mut().enumerate().take(site.dim()) {
        let bits = mix64(key.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)));
        *o = (2.0 * unit_uniform(bits) - 1.0) * rho;
    }
    out
}

/// A field point together with the lattice site it was generated from (the hat map).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SitePoint {
    pub site: LatticeSite,
    pub offset: Point,
    pub position: Point,
}

impl SitePoint {
    pub(crate) fn from_offset(site: LatticeSite, offset: [f64; MAX_DIM]) -> Self {
        let dim = site.dim();
        let base = site.to_point().raw();
        let mut pos = [0.0; MAX_DIM];
        let mut off = [0.0; MAX_DIM];
        for k in 0..dim {
            pos[k] = base[k] + offset[k];
            // recompute so that position - site == offset holds bit-for-bit
            off[k] = pos[k] - base[k];
        }
        Self { site, offset: Point::from_array(dim, off), position: Point::from_array(dim, pos) }
    }

    /// The bare lattice site as a location (zero offset). Exploration starts here.
    pub fn at_site(site: LatticeSite) -> Self {
        Self::from_offset(site, [0.0; MAX_DIM])
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.position.height()
    }
}

impl PartialEq for SitePoint {
    fn eq(&self, other: &Self) -> bool {
        self.site == other.site && self.offset.coords().iter().zip(other.offset.coords()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for SitePoint {}

impl Hash for SitePoint {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.site.hash(state);
        for c in self.offset.coords() {
            c.to_bits().hash(state);
        }
    }
}

#[derive(Debug)]
struct Coupling {
    near_u: FieldConfig,
    near_v: FieldConfig,
    rest: FieldConfig,
    u: LatticeSite,
    v: LatticeSite,
    radius: f64,
}

impl Coupling {
    fn pick(&self, w: &LatticeSite) -> &FieldConfig {
        let dist = |a: &LatticeSite| -> i64 { a.transverse().iter().zip(w.transverse()).map(|(x, y)| (x - y).abs()).sum() };
        if (dist(&self.u) as f64) < self.radius {
            &self.near_u
        } else if (dist(&self.v) as f64) < self.radius {
            &self.near_v
        } else {
            &self.rest
        }
    }
}

#[derive(Clone, Debug)]
enum Source {
    Hashed { seed: u64 },
    Coupled(Arc<Coupling>),
}

/// Immutable description of a perturbed lattice.
#[derive(Clone, Debug)]
pub struct FieldConfig {
    dim: usize,
    half_width: f64,
    source: Source,
    overrides: Arc<BTreeMap<LatticeSite, [f64; MAX_DIM]>>,
}

impl FieldConfig {
    /// Field with the default perturbation box [-1, 1]^d.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { dim, half_width: 1.0, source: Source::Hashed { seed }, overrides: Arc::default() })
    }

    pub fn with_half_width(mut self, half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(DsfError::invalid(format!("half_width must be positive, got {half_width}")));
        }
        if !self.overrides.is_empty() {
            return Err(DsfError::invalid("set half_width before adding overrides"));
        }
        self.half_width = half_width;
        Ok(self)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Seed of a plain hashed field; `None` for composite fields.
    pub fn seed(&self) -> Option<u64> {
        match self.source {
            Source::Hashed { seed } => Some(seed),
            Source::Coupled(_) => None,
        }
    }

    pub fn overrides(&self) -> &BTreeMap<LatticeSite, [f64; MAX_DIM]> {
        &self.overrides
    }

    /// New config in which the listed sites take fixed offsets. Existing
    /// overrides are kept unless reassigned.
    pub fn with_overrides<I>(&self, assignments: I) -> Result<Self>
    where
        I: IntoIterator<Item = (LatticeSite, Point)>,
    {
        let mut map = (*self.overrides).clone();
        for (site, off) in assignments {
            if site.dim() != self.dim || off.dim() != self.dim {
                return Err(DsfError::invalid("override dimension mismatch"));
            }
            if off.coords().iter().any(|c| c.abs() > self.half_width) {
                return Err(DsfError::invalid(format!(
                    "override offset {:?} at {:?} lies outside [-{}, {}]^d",
                    off, site, self.half_width, self.half_width
                )));
            }
            map.insert(site, off.raw());
        }
        Ok(Self { overrides: Arc::new(map), ..self.clone() })
    }

    /// Composite field: sites within transverse L1 distance `radius` of `u`
    /// read from `near_u`, those near `v` from `near_v`, all others from `rest`.
    pub(crate) fn coupled(
        near_u: &FieldConfig,
        near_v: &FieldConfig,
        rest: &FieldConfig,
        u: LatticeSite,
        v: LatticeSite,
        radius: f64,
    ) -> Result<Self> {
        let dim = rest.dim;
        let rho = rest.half_width;
        if [near_u, near_v].iter().any(|f| f.dim != dim || f.half_width != rho) {
            return Err(DsfError::invalid("coupled fields must share dimension and half_width"));
        }
        if u.dim() != dim || v.dim() != dim {
            return Err(DsfError::invalid("coupling centres have the wrong dimension"));
        }
        let coupling = Coupling { near_u: near_u.clone(), near_v: near_v.clone(), rest: rest.clone(), u, v, radius };
        Ok(Self { dim, half_width: rho, source: Source::Coupled(Arc::new(coupling)), overrides: Arc::default() })
    }

    /// U_w for a site of the right dimension (unchecked).
    #[inline]
    pub(crate) fn offset_of(&self, w: &LatticeSite) -> [f64; MAX_DIM] {
        if !self.overrides.is_empty() {
            if let Some(o) = self.overrides.get(w) {
                return *o;
            }
        }
        match &self.source {
            Source::Hashed { seed } => hashed_offset(*seed, self.half_width, w),
            Source::Coupled(c) => c.pick(w).offset_of(w),
        }
    }

    /// The perturbation U_w.
    pub fn perturbation(&self, w: &LatticeSite) -> Result<Point> {
        self.check_site(w)?;
        Ok(self.point(w).offset)
    }

    #[inline]
    pub fn point(&self, w: &LatticeSite) -> SitePoint {
        SitePoint::from_offset(*w, self.offset_of(w))
    }

    fn check_site(&self, w: &LatticeSite) -> Result<()> {
        if w.dim() != self.dim {
            return Err(DsfError::invalid(format!("site has {} coordinates, field has dimension {}", w.dim(), self.dim)));
        }
        Ok(())
    }

    /// Every field point whose position lies in the closed box, in site order.
    pub fn points_in_box(&self, bx: &AxisBox) -> Result<Vec<SitePoint>> {
        if bx.dim() != self.dim {
            return Err(DsfError::invalid("box dimension mismatch"));
        }
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..self.dim {
            lo[k] = (bx.lo.coords()[k] - self.half_width).ceil() as i64;
            hi[k] = (bx.hi.coords()[k] + self.half_width).floor() as i64;
        }
        let mut out = Vec::new();
        for_each_site(self.dim, lo, hi, |w| {
            let p = self.point(&w);
            if bx.contains(&p.position) {
                out.push(p);
            }
        });
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(c: &[i64]) -> LatticeSite {
        LatticeSite::new(c).unwrap()
    }

    #[test]
    fn repeated_queries_agree() {
        let f = FieldConfig::new(2, 7).unwrap();
        let a = f.perturbation(&site(&[0, 0])).unwrap();
        let b = f.perturbation(&site(&[0, 0])).unwrap();
        assert_eq!(a, b);
        let g = FieldConfig::new(2, 8).unwrap();
        assert_ne!(a, g.perturbation(&site(&[0, 0])).unwrap());
    }

    #[test]
    fn offsets_stay_in_box_and_match_position() {
        for &rho in &[1.0, 0.3] {
            let f = FieldConfig::new(3, 11).unwrap().with_half_width(rho).unwrap();
            for x in -20..20 {
                for y in -5..5 {
                    let w = site(&[x, y, x * y]);
                    let p = f.point(&w);
                    for k in 0..3 {
                        assert!(p.offset.coords()[k].abs() <= rho);
                        assert_eq!(p.position.coords()[k] - w.coords()[k] as f64, p.offset.coords()[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = FieldConfig::new(2, 7).unwrap();
        assert!(matches!(f.perturbation(&site(&[0, 0, 0])), Err(DsfError::InvalidInput(_))));
        assert!(FieldConfig::new(4, 7).is_err());
        assert!(FieldConfig::new(2, 7).unwrap().with_half_width(0.0).is_err());
    }

    #[test]
    fn first_component_mean_is_near_zero() {
        // 10^6 distinct sites; the uniform law has sd 2/sqrt(12).
        let f = FieldConfig::new(2, 7).unwrap();
        let mut sum = 0.0;
        for x in 0..1000 {
            for y in 0..1000 {
                sum += f.offset_of(&site(&[x, y]))[0];
            }
        }
        let mean = sum / 1e6;
        assert!(mean.abs() < 3.0 * (2.0 / 12f64.sqrt()) / 1e3, "mean {mean}");
    }

    #[test]
    fn override_pins_a_site_and_leaves_others() {
        let f = FieldConfig::new(2, 7).unwrap();
        let g = f.with_overrides([(site(&[0, 0]), Point::new(&[0.5, 0.5]).unwrap())]).unwrap();
        assert_eq!(g.perturbation(&site(&[0, 0])).unwrap().coords(), &[0.5, 0.5]);
        assert_eq!(g.perturbation(&site(&[1, 0])).unwrap(), f.perturbation(&site(&[1, 0])).unwrap());
        let bx = AxisBox::new(&[0.4, 0.4], &[0.6, 0.6]).unwrap();
        let pts = g.points_in_box(&bx).unwrap();
        assert!(pts.iter().any(|p| p.site == site(&[0, 0]) && p.position.coords() == [0.5, 0.5]));
    }

    #[test]
    fn empty_override_set_is_identity() {
        let f = FieldConfig::new(3, 3).unwrap();
        let g = f.with_overrides(std::iter::empty()).unwrap();
        for x in -3..3 {
            let w = site(&[x, 1, -x]);
            assert_eq!(f.point(&w), g.point(&w));
        }
    }

    #[test]
    fn override_outside_box_is_rejected() {
        let f = FieldConfig::new(2, 7).unwrap();
        let r = f.with_overrides([(site(&[0, 0]), Point::new(&[1.5, 0.0]).unwrap())]);
        assert!(matches!(r, Err(DsfError::InvalidInput(_))));
    }

    #[test]
    fn emptied_region_gives_empty_box_query() {
        // push every point that could reach [-0.25, 0.25]^2 out of it
        let f = FieldConfig::new(2, 5).unwrap();
        let mut pins = Vec::new();
        for x in -2..=2 {
            for y in -2..=2 {
                let off = if x == 0 && y == 0 { [0.9, 0.9] } else { [0.0, 0.0] };
                pins.push((site(&[x, y]), Point::new(&off).unwrap()));
            }
        }
        let g = f.with_overrides(pins).unwrap();
        let bx = AxisBox::centered(2, 0.25).unwrap();
        assert!(g.points_in_box(&bx).unwrap().is_empty());
    }

    #[test]
    fn box_query_matches_exhaustive_scan() {
        let f = FieldConfig::new(2, 7).unwrap();
        let bx = AxisBox::centered(2, 10.0).unwrap();
        let got = f.points_in_box(&bx).unwrap();
        let mut want = Vec::new();
        for x in -11..=11 {
            for y in -11..=11 {
                let p = f.point(&site(&[x, y]));
                if bx.contains(&p.position) {
                    want.push(p);
                }
            }
        }
        assert_eq!(got, want);
    }
}
