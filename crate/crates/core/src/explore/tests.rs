use super::*;
use crate::dsf::h_step;
use crate::field::{FieldConfig, SitePoint};
use crate::geom::{LatticeSite, Point};

fn site(c: &[i64]) -> LatticeSite {
    LatticeSite::new(c).unwrap()
}

fn pt(c: &[f64]) -> Point {
    Point::new(c).unwrap()
}

/// Field where every site in `xs × ys` sits at a fixed offset, except where `f` says otherwise.
fn planted(xs: std::ops::RangeInclusive<i64>, ys: std::ops::RangeInclusive<i64>, f: impl Fn(i64, i64) -> [f64; 2]) -> FieldConfig {
    let mut pins = Vec::new();
    for x in xs {
        for y in ys.clone() {
            pins.push((site(&[x, y]), pt(&f(x, y))));
        }
    }
    FieldConfig::new(2, 99).unwrap().with_overrides(pins).unwrap()
}

/// Both caps above u = (0,0) and v = (10,0) occupied, everything below level 1 pushed down.
fn special_up_field(tweak: impl Fn(i64, i64) -> Option<[f64; 2]>) -> FieldConfig {
    planted(-8..=18, -4..=4, |x, y| tweak(x, y).unwrap_or(if y <= 0 { [0.0, -0.9] } else { [0.0, 0.01] }))
}

#[test]
fn lower_floor_moves_alone() {
    let f = FieldConfig::new(2, 3).unwrap();
    let mut s = ExplorationState::pair(&f, site(&[0, 0]), site(&[6, 1]), ExploreOptions::default()).unwrap();
    let v0 = *s.v().unwrap();
    let ev = s.step(&f);
    assert_eq!(ev.movers, Movers::U);
    assert_eq!(*s.v().unwrap(), v0);
    assert_ne!(*s.u(), SitePoint::at_site(site(&[0, 0])));

    let mut s = ExplorationState::pair(&f, site(&[6, 1]), site(&[0, 0]), ExploreOptions::default()).unwrap();
    assert_eq!(s.step(&f).movers, Movers::V);
}

#[test]
fn landing_on_partner_takes_double_step_and_coalesces() {
    let f = planted(-6..=6, -3..=4, |x, _| if x >= 1 { [1.0, 0.9] } else { [-1.0, 0.9] });
    let f = f.with_overrides([(site(&[0, 0]), pt(&[0.0, 0.2])), (site(&[1, 0]), pt(&[-0.5, 0.5]))]).unwrap();
    let gu = f.point(&site(&[0, 0]));
    let gv = f.point(&site(&[1, 0]));
    assert_eq!(h_step(&f, &gu.position), gv);

    let mut s = ExplorationState::pair(&f, site(&[0, 0]), site(&[1, 0]), ExploreOptions::default()).unwrap();
    s.positions = vec![gu, gv];
    s.history = HistoryRegion::new(0.2);
    let ev = s.step(&f);
    assert_eq!(ev.movers, Movers::Both);
    let h2 = h_step(&f, &gv.position);
    assert_eq!(s.positions, vec![h2, h2]);
    assert!(s.coalesced);
    // u's second leg adds nothing
    let apexes: Vec<Point> = s.history.balls.iter().map(|b| b.apex).collect();
    assert!(apexes.iter().all(|a| *a == gu.position || *a == gv.position));
    assert!(apexes.len() <= 2);

    // absorption
    s.step(&f);
    assert_eq!(s.positions[0], s.positions[1]);
    assert!(s.coalesced);
}

#[test]
fn single_mode_is_iterated_h() {
    let f = FieldConfig::new(3, 8).unwrap();
    let mut s = ExplorationState::single(&f, LatticeSite::origin(3), ExploreOptions::default()).unwrap();
    let mut cur = Point::zero(3);
    for _ in 0..50 {
        s.step(&f);
        cur = h_step(&f, &cur).position;
        assert_eq!(s.u().position, cur);
    }
    assert_eq!(s.log.len(), 50);
    assert!(s.used_sites.contains(&s.u().site));
}

#[test]
fn planted_caps_give_special_up() {
    let f = special_up_field(|_, _| None);
    let mut s = ExplorationState::pair(&f, site(&[0, 0]), site(&[10, 0]), ExploreOptions::default()).unwrap();
    let before = s.clone();
    let ev = s.step(&f);
    assert_eq!(ev.kind, StepKind::SpecialUp);
    assert!(ev.event_a);
    assert_eq!(classify_step(&before, &s, &f, DEFAULT_DELTA), StepKind::SpecialUp);
    assert_eq!(s.u().site, site(&[0, 1]));
    assert_eq!(s.v().unwrap().site, site(&[10, 1]));
}

#[test]
fn one_bad_neighbour_leaves_plain_up() {
    let f = special_up_field(|x, y| ((x, y) == (1, 2)).then_some([0.5, 0.5]));
    let mut s = ExplorationState::pair(&f, site(&[0, 0]), site(&[10, 0]), ExploreOptions::default()).unwrap();
    let ev = s.step(&f);
    assert_eq!(ev.kind, StepKind::Up);
    assert!(!ev.event_a);
}

#[test]
fn landing_outside_cap_is_basic() {
    let f = special_up_field(|x, y| ((x, y) == (0, 1)).then_some([0.3, 0.01]));
    let mut s = ExplorationState::pair(&f, site(&[0, 0]), site(&[10, 0]), ExploreOptions::default()).unwrap();
    let before = s.clone();
    assert_eq!(s.step(&f).kind, StepKind::Basic);
    assert_eq!(classify_step(&before, &s, &f, DEFAULT_DELTA), StepKind::Basic);
}

#[test]
fn neighbourhood_sizes() {
    assert_eq!(upper_neighbourhood(&site(&[0, 0])).len(), 6);
    assert_eq!(upper_neighbourhood(&LatticeSite::origin(3)).len(), 18);
    let w = site(&[2, 5]);
    assert!(upper_neighbourhood(&w).iter().all(|y| y.level() >= 5 && (y.coords()[0] - 2).abs() <= 1));
}

fn event(index: u64, kind: StepKind, sites: &[[i64; 2]]) -> StepEvent {
    StepEvent {
        index,
        movers: Movers::Both,
        kind,
        positions: sites.iter().map(|c| SitePoint::at_site(site(c))).collect(),
        event_a: kind == StepKind::SpecialUp,
    }
}

#[test]
fn no_up_steps_no_renewals() {
    let log: Vec<_> = (1..=100).map(|n| event(n, StepKind::Basic, &[[0, n as i64]])).collect();
    assert!(detect_renewals(&log, 9).unwrap().is_empty());
    assert!(detect_renewals(&log, 4).is_err());
}

#[test]
fn renewal_found_by_hand() {
    let m = 9u64;
    let log: Vec<_> = (1..=40)
        .map(|n| {
            let kind = match n {
                _ if n < 10 => StepKind::Basic,
                _ if n < 10 + m - 1 => StepKind::Up,
                _ if n == 10 + m - 1 => StepKind::SpecialUp,
                _ => StepKind::Basic,
            };
            event(n, kind, &[[0, n as i64]])
        })
        .collect();
    let recs = detect_renewals(&log, m as usize).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].tau, 10 + m - 1);
    assert_eq!(recs[0].gap, 18);
    assert_eq!(recs[0].width, 2.0 * 9.0 * 18.0);
}

#[test]
fn renewals_are_separated_by_more_than_m_d() {
    let log: Vec<_> = (1..=200).map(|n| event(n, StepKind::SpecialUp, &[[(n % 7) as i64, n as i64]])).collect();
    let recs = detect_renewals(&log, 9).unwrap();
    assert_eq!(recs[0].tau, 10);
    for w in recs.windows(2) {
        assert!(w[1].tau > w[0].tau + 9);
        assert_eq!(w[1].gap, w[1].tau - w[0].tau);
    }
    // telescoping
    let obs = extract_observables(&recs);
    let total: i64 = obs.y.iter().map(|y| y[0]).sum();
    let first = recs[0].hat_sites[0].coords()[0];
    let last = recs.last().unwrap().hat_sites[0].coords()[0];
    assert_eq!(total, last - first);
    assert_eq!(obs.y.len(), recs.len() - 1);
}

#[test]
fn coalesced_before_second_renewal_gives_nu_two() {
    let mut log: Vec<_> = (1..=10).map(|n| event(n, StepKind::SpecialUp, &[[0, n as i64], [4, n as i64]])).collect();
    log.extend((11..=20).map(|n| event(n, StepKind::SpecialUp, &[[2, n as i64], [2, n as i64]])));
    let recs = detect_renewals(&log, 9).unwrap();
    assert_eq!(recs.len(), 2);
    let obs = extract_observables(&recs);
    assert_eq!(obs.z, vec![vec![-4], vec![0]]);
    assert_eq!(obs.nu, Some(2));
    assert!(extract_observables(&recs[..1]).y.is_empty());
}

#[test]
fn records_csv_has_one_row_per_record() {
    let log: Vec<_> = (1..=60).map(|n| event(n, StepKind::SpecialUp, &[[0, n as i64], [3, n as i64]])).collect();
    let recs = detect_renewals(&log, 9).unwrap();
    let mut buf = Vec::new();
    write_records_csv(&mut buf, &recs, 2).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "j,tau,gap,y1,z1,width");
    assert_eq!(text.lines().count(), recs.len() + 1);
    assert!(text.lines().nth(1).unwrap().starts_with("1,10,10,,-3,"));
}

#[test]
fn fresh_state_passes_invariants() {
    let f = FieldConfig::new(2, 42).unwrap();
    let s = ExplorationState::pair(&f, site(&[0, 0]), site(&[4, 0]), ExploreOptions::default()).unwrap();
    assert!(verify_exploration_invariants(&s, &f, 9).passed());
}

#[test]
fn planted_interior_point_is_reported() {
    let f = FieldConfig::new(2, 42).unwrap();
    let mut s = ExplorationState::single(&f, site(&[0, 0]), ExploreOptions::default()).unwrap();
    s.history = HistoryRegion { baseline: 0.0, balls: vec![UpperBall::new(pt(&[0.0, 0.0]), 4.0).unwrap()] };
    let report = verify_exploration_invariants(&s, &f, 9);
    assert!(!report.passed());
    let found: Vec<_> = report
        .violations
        .iter()
        .filter_map(|v| match v {
            Violation::InteriorPoint { point, .. } => Some(*point),
            _ => None,
        })
        .collect();
    assert!(!found.is_empty());
    for p in found {
        assert!(p.position.l1(&pt(&[0.0, 0.0])) < 4.0 && p.height() > 0.0);
    }
}

#[test]
fn short_runs_keep_invariants() {
    for (dim, seed) in [(2usize, 42u64), (3, 42)] {
        let f = FieldConfig::new(dim, seed).unwrap();
        let m_d = default_m_d(dim, 1.0);
        let mut v = vec![0i64; dim];
        v[0] = 3;
        let mut s =
            ExplorationState::pair(&f, LatticeSite::origin(dim), LatticeSite::new(&v).unwrap(), ExploreOptions::lean(DEFAULT_DELTA))
                .unwrap();
        for _ in 0..2000 {
            s.step(&f);
            let r = verify_exploration_invariants(&s, &f, m_d);
            for v in &r.violations {
                // a cone can only reach balls whose apex is not below the baseline
                match v {
                    Violation::ConeMeetsHistory { ball, .. } => assert!(ball.apex.height() >= s.history.baseline),
                    other => panic!("{other:?}"),
                }
            }
        }
    }
}

#[test]
fn partner_ball_can_enter_the_cone() {
    // v sits one column right of u on the same level; both move, u stays low
    let f = planted(-6..=6, -3..=4, |_, y| if y <= 1 { [0.0, -0.95] } else { [0.0, 0.9] });
    let f = f
        .with_overrides([
            (site(&[0, 0]), pt(&[0.0, 0.1])),
            (site(&[1, 0]), pt(&[0.0, 0.8])),
            (site(&[0, 1]), pt(&[0.0, -0.45])),
            (site(&[1, 1]), pt(&[0.4, 0.5])),
        ])
        .unwrap();
    let mut s = ExplorationState::pair(&f, site(&[0, 0]), site(&[1, 0]), ExploreOptions::default()).unwrap();
    s.positions = vec![f.point(&site(&[0, 0])), f.point(&site(&[1, 0]))];
    s.history = HistoryRegion::new(0.1);
    s.step(&f);
    assert_eq!(s.u().site, site(&[0, 1]));
    assert_eq!(s.v().unwrap().site, site(&[1, 1]));
    let r = verify_exploration_invariants(&s, &f, 9);
    assert!(r.violations.iter().all(|v| matches!(v, Violation::ConeMeetsHistory { ball, .. } if ball.apex.coords() == [1.0, 0.8])));
    assert!(!r.passed());
}

#[test]
fn coupled_field_reads_the_right_source() {
    let a = FieldConfig::new(3, 1).unwrap();
    let b = FieldConfig::new(3, 2).unwrap();
    let c = FieldConfig::new(3, 3).unwrap();
    let u = LatticeSite::new(&[0, 0, 0]).unwrap();
    let v = LatticeSite::new(&[30, 0, 0]).unwrap();
    assert!(coupled_field(&a, &b, &c, u, v, 10.0).is_err());
    let f = coupled_field(&a, &b, &c, u, v, 5.0).unwrap();
    let near_u = LatticeSite::new(&[2, 2, 7]).unwrap();
    let near_v = LatticeSite::new(&[29, -1, -3]).unwrap();
    let far = LatticeSite::new(&[15, 0, 0]).unwrap();
    assert_eq!(f.point(&near_u), a.point(&near_u));
    assert_eq!(f.point(&near_v), b.point(&near_v));
    assert_eq!(f.point(&far), c.point(&far));
}

#[test]
fn identical_walks_renew_together() {
    // caps wide enough that renewals happen within a short run
    let f = FieldConfig::new(2, 5).unwrap();
    let u = site(&[0, 0]);
    let out = independent_pair_renewals(&f, &f, u, u, 5, 2.0, 200_000, 5).unwrap();
    let taus: Vec<u64> = out.marginal_u.iter().map(|r| r.tau).collect();
    assert_eq!(out.marginal_u, out.marginal_v);
    assert_eq!(out.common.iter().map(|c| c.tau).collect::<Vec<_>>(), taus);
    assert!(!out.common.is_empty());
}

#[test]
fn common_renewals_are_marginal_renewals() {
    let fa = FieldConfig::new(2, 11).unwrap();
    let fb = FieldConfig::new(2, 12).unwrap();
    let out = independent_pair_renewals(&fa, &fb, site(&[0, 0]), site(&[20, 0]), 5, 2.0, 200_000, 3).unwrap();
    for c in &out.common {
        assert!(out.marginal_u.iter().any(|r| r.tau == c.tau));
        assert!(out.marginal_v.iter().any(|r| r.tau == c.tau));
    }
    assert!(independent_pair_renewals(&fa, &fb, site(&[0, 0]), site(&[20, 1]), 5, 2.0, 10, 1).is_err());
}
