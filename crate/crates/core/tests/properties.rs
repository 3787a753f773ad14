use pdsf::dsf::{coalesce_paths, paths_cross, search_radius};
use pdsf::scaling::{d_pi, eta_count, scale_path, Direction, PathFamily, ScaledPath, D_PI_TOL};
use pdsf::{h_step, trace_path, FieldConfig, LatticeSite, Point, Polyline, SitePoint, Stop};
use proptest::prelude::*;

fn brute_h(field: &FieldConfig, x: &Point) -> SitePoint {
    let dim = field.dim();
    let r = search_radius(dim, field.half_width()).ceil() as i64 + 2;
    let c: Vec<i64> = x.coords().iter().map(|v| v.floor() as i64).collect();
    let mut best: Option<SitePoint> = None;
    let span = (2 * r + 1) as usize;
    for flat in 0..span.pow(dim as u32) {
        let mut rest = flat;
        let w: Vec<i64> = (0..dim)
            .map(|k| {
                let o = (rest % span) as i64 - r;
                rest /= span;
                c[k] + o
            })
            .collect();
        let p = field.point(&LatticeSite::new(&w).unwrap());
        if p.position.height() <= x.height() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let (d, bd) = (p.position.l1(x), b.position.l1(x));
                d < bd || (d == bd && p.position.lex_cmp(&b.position).is_lt())
            }
        };
        if better {
            best = Some(p);
        }
    }
    best.unwrap()
}

fn point_strategy() -> impl Strategy<Value = (usize, u64, Vec<f64>)> {
    (2usize..=3, 0u64..1000).prop_flat_map(|(dim, seed)| (Just(dim), Just(seed), prop::collection::vec(-40.0f64..40.0, dim)))
}

fn polyline_strategy() -> impl Strategy<Value = Polyline> {
    (prop::collection::vec(0.01f64..0.5, 1..8), prop::collection::vec(-2.0f64..2.0, 8), -1.0f64..1.0).prop_map(|(gaps, vals, t0)| {
        let mut times = vec![t0];
        for g in &gaps {
            times.push(times.last().unwrap() + g);
        }
        let values = vals[..times.len()].to_vec();
        Polyline::new(times, values).unwrap()
    })
}

fn starting_at(p: Polyline, t0: f64) -> Polyline {
    let shift = t0 - p.start();
    Polyline::new(p.times.iter().map(|t| t + shift).collect(), p.values).unwrap()
}

fn unit(p: Polyline) -> ScaledPath {
    scale_path(&p, 1, 1.0, 1.0, Direction::Forward).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn h_step_matches_exhaustive_search((dim, seed, c) in point_strategy()) {
        let field = FieldConfig::new(dim, seed).unwrap();
        let x = Point::new(&c).unwrap();
        let h = h_step(&field, &x);
        prop_assert_eq!(&h, &brute_h(&field, &x));
        prop_assert!(h.position.height() > x.height());
        prop_assert!(h.position.l1(&x) <= search_radius(dim, 1.0));
    }

    #[test]
    fn d_pi_is_bounded_and_symmetric(a in polyline_strategy(), b in polyline_strategy()) {
        let (a, b) = (unit(a), unit(b));
        let ab = d_pi(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&ab));
        prop_assert!((ab - d_pi(&b, &a).unwrap()).abs() <= 2.0 * D_PI_TOL);
        prop_assert!(d_pi(&a, &a).unwrap() <= D_PI_TOL);
    }

    // With different start times the sup ranges differ and the triangle
    // inequality can fail, so the three paths share a start here.
    #[test]
    fn d_pi_triangle_inequality_for_a_common_start(
        a in polyline_strategy(),
        b in polyline_strategy(),
        c in polyline_strategy(),
        t0 in -1.0f64..1.0,
    ) {
        let (a, b, c) = (unit(starting_at(a, t0)), unit(starting_at(b, t0)), unit(starting_at(c, t0)));
        let ab = d_pi(&a, &b).unwrap();
        let bc = d_pi(&b, &c).unwrap();
        let ac = d_pi(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 3.0 * D_PI_TOL);
    }

    #[test]
    fn eta_grows_with_the_window(
        paths in prop::collection::vec(polyline_strategy(), 1..10),
        a in -2.0f64..0.0,
        b in 0.0f64..2.0,
        widen in 0.0f64..1.0,
        t in 0.05f64..1.0,
    ) {
        let family = PathFamily::new(paths.into_iter().map(unit).collect()).unwrap();
        let inner = eta_count(&family, 0.0, t, a, b).unwrap();
        let outer = eta_count(&family, 0.0, t, a - widen, b + widen).unwrap();
        prop_assert!(inner <= outer);
        prop_assert!(outer <= family.paths.len());
    }

    #[test]
    fn planar_paths_never_cross(seed in 0u64..500, x1 in -10.0f64..10.0, x2 in -10.0f64..10.0, y1 in -3.0f64..3.0, y2 in -3.0f64..3.0) {
        let field = FieldConfig::new(2, seed).unwrap();
        let trace = |x: f64, y: f64| trace_path(&field, &Point::new(&[x, y]).unwrap(), Stop::Height(60.0)).unwrap().polyline().unwrap();
        let (p, q) = (trace(x1, y1), trace(x2, y2));
        prop_assert!(!paths_cross(&p, &q));
        let back = |p: &Polyline| scale_path(p, 4, 1.0, 1.0, Direction::Backward).unwrap();
        // rescaling preserves order, so backward views cannot cross either
        prop_assert!(!paths_cross(&back(&p).path, &back(&q).path));
    }

    #[test]
    fn coalescence_ignores_start_order(seed in 0u64..500, xs in prop::collection::vec(-12i64..12, 2..6), rot in 0usize..6) {
        let field = FieldConfig::new(2, seed).unwrap();
        let starts: Vec<Point> = xs.iter().map(|x| Point::new(&[*x as f64, 0.0]).unwrap()).collect();
        let mut rotated = starts.clone();
        rotated.rotate_left(rot % starts.len());
        rotated.reverse();
        let a = coalesce_paths(&field, &starts, 500.0).unwrap();
        let b = coalesce_paths(&field, &rotated, 500.0).unwrap();
        let sorted = |mut v: Vec<f64>| { v.sort_by(f64::total_cmp); v };
        prop_assert_eq!(a.all_merged, b.all_merged);
        prop_assert_eq!(sorted(a.merges), sorted(b.merges));
    }
}
