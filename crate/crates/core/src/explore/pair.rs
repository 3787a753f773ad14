use serde::Serialize;

use crate::dsf::h_step;
use crate::error::{DsfError, Result};
use crate::field::{FieldConfig, SitePoint};
use crate::geom::LatticeSite;

use super::renewal::{RenewalDetector, RenewalRecord};
use super::state::{ExplorationState, ExploreOptions, Movers};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimultaneousRenewal {
    pub m: usize,
    pub tau: u64,
    /// Hat sites of the two walks. They need not share a level: each walk
    /// takes one h-step per time unit.
    pub hat_sites: [LatticeSite; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct IndependentRenewals {
    pub marginal_u: Vec<RenewalRecord>,
    pub marginal_v: Vec<RenewalRecord>,
    pub common: Vec<SimultaneousRenewal>,
    pub steps: u64,
    /// Set when the budget ran out before `wanted` common renewals appeared.
    pub truncated: bool,
}

/// Two single-path explorations on their own fields, stepped in lockstep.
/// Common renewal times are the times that are renewals for both walks.
#[allow(clippy::too_many_arguments)]
pub fn independent_pair_renewals(
    field_a: &FieldConfig,
    field_b: &FieldConfig,
    u: LatticeSite,
    v: LatticeSite,
    m_d: usize,
    delta: f64,
    budget: u64,
    wanted: usize,
) -> Result<IndependentRenewals> {
    if u.dim() != v.dim() || u.level() != v.level() {
        return Err(DsfError::invalid("independent pair must start on a common level"));
    }
    let opts = ExploreOptions::lean(delta);
    let mut a = ExplorationState::single(field_a, u, opts)?;
    let mut b = ExplorationState::single(field_b, v, opts)?;
    let mut da = RenewalDetector::new(m_d)?;
    let mut db = RenewalDetector::new(m_d)?;
    let mut common = Vec::new();
    let mut steps = 0;
    while steps < budget && common.len() < wanted {
        let ea = a.step(field_a);
        let eb = b.step(field_b);
        steps += 1;
        let ra = da.push(&ea).map(|r| r.hat_sites[0]);
        let rb = db.push(&eb).map(|r| r.hat_sites[0]);
        if let (Some(sa), Some(sb)) = (ra, rb) {
            common.push(SimultaneousRenewal { m: common.len() + 1, tau: steps, hat_sites: [sa, sb] });
        }
    }
    Ok(IndependentRenewals {
        marginal_u: da.into_records(),
        marginal_v: db.into_records(),
        truncated: common.len() < wanted,
        common,
        steps,
    })
}

/// Ũ: sites transversally within `r` (L1) of u read `near_u`, those within `r`
/// of v read `near_v`, all others read `rest`.
pub fn coupled_field(
    near_u: &FieldConfig,
    near_v: &FieldConfig,
    rest: &FieldConfig,
    u: LatticeSite,
    v: LatticeSite,
    r: f64,
) -> Result<FieldConfig> {
    let sep: i64 = u.transverse().iter().zip(v.transverse()).map(|(a, b)| (a - b).abs()).sum();
    if !(r > 0.0) || r >= sep as f64 / 3.0 {
        return Err(DsfError::invalid(format!("coupling radius {r} must lie in (0, {}/3)", sep)));
    }
    FieldConfig::coupled(near_u, near_v, rest, u, v, r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingOutcome {
    pub success: bool,
    /// First joint renewal of the coupled pair, if reached within budget.
    pub tau1: Option<u64>,
    pub width1: Option<f64>,
    pub steps: u64,
}

/// Runs the joint exploration on the coupled field up to its first joint
/// renewal (or the budget) and compares both trajectories with the paths of
/// u in `near_u` and v in `near_v`.
#[allow(clippy::too_many_arguments)]
pub fn coupling_trial(
    near_u: &FieldConfig,
    near_v: &FieldConfig,
    rest: &FieldConfig,
    u: LatticeSite,
    v: LatticeSite,
    r: f64,
    m_d: usize,
    delta: f64,
    budget: u64,
) -> Result<CouplingOutcome> {
    let coupled = coupled_field(near_u, near_v, rest, u, v, r)?;
    let mut state = ExplorationState::pair(&coupled, u, v, ExploreOptions::lean(delta))?;
    let mut det = RenewalDetector::new(m_d)?;
    let mut path_u: Vec<SitePoint> = Vec::new();
    let mut path_v: Vec<SitePoint> = Vec::new();
    let mut tau1 = None;
    let mut width1 = None;
    let mut steps = 0;
    while steps < budget {
        let ev = state.step(&coupled);
        steps += 1;
        if matches!(ev.movers, Movers::U | Movers::Both) {
            path_u.push(ev.positions[0]);
        }
        if matches!(ev.movers, Movers::V | Movers::Both) {
            path_v.push(ev.positions[1]);
        }
        if let Some(rec) = det.push(&ev) {
            tau1 = Some(rec.tau);
            width1 = Some(rec.width);
            break;
        }
    }
    let matches = |field: &FieldConfig, start: LatticeSite, path: &[SitePoint]| {
        let mut cur = SitePoint::at_site(start).position;
        path.iter().all(|p| {
            let next = h_step(field, &cur);
            cur = next.position;
            next == *p
        })
    };
    let success = matches(near_u, u, &path_u) && matches(near_v, v, &path_v);
    Ok(CouplingOutcome { success, tau1, width1, steps })
}
