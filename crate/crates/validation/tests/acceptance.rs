//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed. The process
//! exits non-zero if any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use pdsf::cli::{emit_report, resolve_config, run_experiment, Args, EXPERIMENTS};
use pdsf::dsf::{h_step, search_radius};
use pdsf::explore::{default_m_d, verify_exploration_invariants, ExplorationState, ExploreOptions, Violation, DEFAULT_DELTA};
use pdsf::stats::*;
use pdsf::{FieldConfig, LatticeSite, Point, SitePoint};
use rand::{rngs::StdRng, Rng, SeedableRng};

// Tolerances and sizes. Changing these changes what is being accepted.
const INV_STEPS_D2: u64 = 100_000;
const INV_STEPS_D3: u64 = 10_000;
const INV_SEEDS: u64 = 10;
const INV_START_SEPARATION: i64 = 3;
const ORACLE_QUERIES: usize = 10_000;
const RENEWAL_GAPS: usize = 10_000;
const RENEWAL_R2: f64 = 0.98;
const RENEWAL_MIN_SURVIVAL: f64 = 1e-3;
const RENEWAL_RUNS: usize = 4;
const RENEWAL_BUDGET: u64 = 2_000_000;
const Y_SAMPLES: usize = 10_000;
const KS_ALPHA: f64 = 0.01;
const SE_FACTOR: f64 = 3.0;
const COAL_TRIALS: usize = 2000;
const COAL_SLOPE: f64 = -0.5;
const COAL_SLOPE_TOL: f64 = 0.1;
const COAL_CONSTANT_TOL: f64 = 0.2;
const TREE_TRIALS: usize = 200;
const TREE_MIN_FRACTION: f64 = 0.99;
const DONSKER_N: u32 = 50;
const DONSKER_TRIALS: usize = 2000;
const DONSKER_KS: f64 = 0.05;
const DONSKER_R2: f64 = 0.99;
const FOSTER_TRANSITIONS: usize = 10_000;
const FOSTER_SE_FACTOR: f64 = 2.0;
const DUAL_SEEDS: usize = 20;
const ETA_TRIALS: usize = 500;

type Criterion = (&'static str, fn() -> Line);

struct Line {
    passed: bool,
    detail: String,
}

fn verdicts(r: &ExperimentReport, names: &[&str]) -> Line {
    let mut parts = Vec::new();
    let mut passed = true;
    for n in names {
        match r.verdict(n) {
            Some(v) => {
                passed &= v.passed;
                let stat = v.statistic.map_or("-".to_string(), |s| format!("{s:.4}"));
                parts.push(format!("{n}={stat}{}", if v.passed { "" } else { " (fail)" }));
            }
            None => {
                passed = false;
                parts.push(format!("{n} missing"));
            }
        }
    }
    Line { passed, detail: parts.join(", ") }
}

fn all_verdicts(r: &ExperimentReport) -> Line {
    let names: Vec<&str> = r.verdicts.iter().map(|v| v.name.as_str()).collect();
    verdicts(r, &names)
}

fn l1(a: &Point, b: &Point) -> f64 {
    a.l1(b)
}

fn criterion_1() -> Line {
    let mut detail = Vec::new();
    let mut passed = true;
    for (dim, steps) in [(2usize, INV_STEPS_D2), (3, INV_STEPS_D3)] {
        let m_d = default_m_d(dim, 1.0);
        let bound = 1.5 * (dim as f64 - 1.0) + 3.0;
        let (mut interior, mut cone, mut cone_low_apex, mut height, mut increments) = (0u64, 0u64, 0u64, 0u64, 0u64);
        let mut steps_with_violation = 0u64;
        for seed in 1..=INV_SEEDS {
            let field = FieldConfig::new(dim, seed).unwrap();
            let mut v = vec![0i64; dim];
            v[0] = INV_START_SEPARATION;
            let mut st = ExplorationState::pair(
                &field,
                LatticeSite::origin(dim),
                LatticeSite::new(&v).unwrap(),
                ExploreOptions::lean(DEFAULT_DELTA),
            )
            .unwrap();
            for _ in 0..steps {
                let before: Vec<SitePoint> = st.positions.clone();
                st.step(&field);
                for i in 0..2 {
                    let (b, a) = (&before[i].position, &st.positions[i].position);
                    if a == b || l1(b, a) <= bound {
                        continue;
                    }
                    // passing through the partner's vertex: two h-steps in one joint step
                    let other = &before[1 - i];
                    let legal = h_step(&field, b) == *other && l1(b, &other.position) <= bound && l1(&other.position, a) <= bound;
                    if !legal {
                        increments += 1;
                    }
                }
                let r = verify_exploration_invariants(&st, &field, m_d);
                if !r.passed() {
                    steps_with_violation += 1;
                }
                for v in &r.violations {
                    match v {
                        Violation::InteriorPoint { .. } => interior += 1,
                        Violation::ConeMeetsHistory { ball, .. } => {
                            cone += 1;
                            if ball.apex.height() < st.history.baseline {
                                cone_low_apex += 1;
                            }
                        }
                        Violation::HeightExceeded { .. } => height += 1,
                    }
                }
            }
        }
        passed &= interior == 0 && cone == 0 && height == 0 && increments == 0;
        detail.push(format!(
            "d={dim}: interior={interior} cone={cone} (apex below baseline: {cone_low_apex}) height={height} increments={increments} violating_steps={steps_with_violation}"
        ));
    }
    Line { passed, detail: detail.join("; ") }
}

/// Exhaustive argmin over a cube that contains the search ball.
fn brute_h(field: &FieldConfig, x: &Point) -> SitePoint {
    let dim = field.dim();
    let r = search_radius(dim, field.half_width()).ceil() as i64 + 2;
    let c: Vec<i64> = x.coords().iter().map(|v| v.floor() as i64).collect();
    let mut best: Option<(f64, SitePoint)> = None;
    let mut idx = vec![-r; dim];
    loop {
        let w: Vec<i64> = c.iter().zip(&idx).map(|(a, b)| a + b).collect();
        let p = field.point(&LatticeSite::new(&w).unwrap());
        if p.position.height() > x.height() {
            let d = p.position.l1(x);
            let better = match &best {
                None => true,
                Some((bd, bp)) => d < *bd || (d == *bd && p.position.lex_cmp(&bp.position).is_lt()),
            };
            if better {
                best = Some((d, p));
            }
        }
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] <= r {
                break;
            }
            idx[k] = -r;
            k += 1;
        }
        if k == dim {
            break;
        }
    }
    best.unwrap().1
}

fn criterion_2() -> Line {
    let mut detail = Vec::new();
    let mut passed = true;
    for dim in [2usize, 3] {
        let field = FieldConfig::new(dim, 2024).unwrap();
        let mut rng = StdRng::seed_from_u64(dim as u64);
        let mut mismatches = 0;
        for _ in 0..ORACLE_QUERIES {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-50.0..50.0)).collect();
            let x = Point::new(&c).unwrap();
            if h_step(&field, &x) != brute_h(&field, &x) {
                mismatches += 1;
            }
        }
        passed &= mismatches == 0;
        detail.push(format!("d={dim}: {mismatches}/{ORACLE_QUERIES} mismatches"));
    }
    Line { passed, detail: detail.join("; ") }
}

fn criterion_3() -> Line {
    let p = RenewalParams {
        runs: RENEWAL_RUNS,
        budget: RENEWAL_BUDGET,
        target_gaps: RENEWAL_GAPS,
        min_survival: RENEWAL_MIN_SURVIVAL,
        r2_min: RENEWAL_R2,
    };
    let r = renewal_tail_experiment(&FieldParams::default(), &p).unwrap();
    let mut l = verdicts(&r, &["gaps", "log_linear_r2"]);
    l.detail += &format!(", steps={}", r.estimates["steps"].unwrap_or(f64::NAN));
    l
}

fn criterion_4() -> Line {
    let p = IncrementParams {
        runs: RENEWAL_RUNS,
        budget: RENEWAL_BUDGET,
        target_samples: Y_SAMPLES,
        min_samples: Y_SAMPLES,
        alpha: KS_ALPHA,
        se_factor: SE_FACTOR,
    };
    let mut detail = Vec::new();
    let mut passed = true;
    for d in [2usize, 3] {
        let r = increments_experiment(&FieldParams { d, ..Default::default() }, &p).unwrap();
        let l = all_verdicts(&r);
        passed &= l.passed;
        detail.push(format!("d={d}: {}", l.detail));
    }
    Line { passed, detail: detail.join("; ") }
}

fn criterion_5() -> Line {
    let p = CoalesceParams {
        dx: vec![2, 8],
        t_grid: (0..=8).map(|k| 100.0 * 10f64.powf(k as f64 / 4.0)).collect(),
        trials: COAL_TRIALS,
        slope_target: COAL_SLOPE,
        slope_tol: COAL_SLOPE_TOL,
        constant_tol: COAL_CONSTANT_TOL,
    };
    let r = coalescence_experiment(&FieldParams::default(), &p).unwrap();
    let mut l = verdicts(&r, &["slope_dx2", "slope_dx8", "constant_spread"]);
    l.detail +=
        &format!(", slopes {:.3}/{:.3}", r.estimates["slope_dx2"].unwrap_or(f64::NAN), r.estimates["slope_dx8"].unwrap_or(f64::NAN));
    l
}

fn criterion_6() -> Line {
    let p2 = TreenessParams {
        k: 5,
        spacing: vec![5],
        budgets: vec![1e5],
        trials: TREE_TRIALS,
        min_fraction: TREE_MIN_FRACTION,
        require_increase: false,
    };
    let r2 = treeness_experiment(&FieldParams::default(), &p2).unwrap();
    let p3 = TreenessParams {
        k: 2,
        spacing: vec![2, 2],
        budgets: vec![1e3, 1e4, 1e5],
        trials: TREE_TRIALS,
        min_fraction: 0.0,
        require_increase: true,
    };
    let r3 = treeness_experiment(&FieldParams { d: 3, ..Default::default() }, &p3).unwrap();
    let a = verdicts(&r2, &["coalesced_fraction"]);
    let b = verdicts(&r3, &["fraction_increases"]);
    let fr3 = r3.verdict("fraction_increases").map(|v| v.detail.clone()).unwrap_or_default();
    Line { passed: a.passed && b.passed, detail: format!("d=2: {}; d=3: {} ({fr3})", a.detail, b.detail) }
}

fn criterion_7() -> Line {
    let p = DonskerParams {
        n: vec![DONSKER_N],
        trials: DONSKER_TRIALS,
        times: vec![0.25, 0.5, 1.0],
        ks_max: DONSKER_KS,
        r2_min: DONSKER_R2,
        ..Default::default()
    };
    let r = donsker_test(&FieldParams::default(), &p).unwrap();
    let mut l = verdicts(&r, &["ks_n50", "variance_r2_n50"]);
    l.detail += &format!(
        ", gamma={:.3} sigma={:.4}, {}",
        r.estimates["gamma"].unwrap_or(f64::NAN),
        r.estimates["sigma"].unwrap_or(f64::NAN),
        r.notes.join(" ")
    );
    l
}

fn criterion_8() -> Line {
    let p = FosterParams { min_transitions: FOSTER_TRANSITIONS, se_factor: FOSTER_SE_FACTOR, ..Default::default() };
    let r = foster_drift_experiment(&FieldParams { d: 3, ..Default::default() }, &p).unwrap();
    let mut l = all_verdicts(&r);
    l.detail += &format!(
        ", joint renewals={} in {} steps",
        r.estimates["joint_renewals"].unwrap_or(f64::NAN),
        r.estimates["steps"].unwrap_or(f64::NAN)
    );
    l
}

fn criterion_9() -> Line {
    let p =
        DualParams { seeds: DUAL_SEEDS, sizes: vec![50.0, 100.0, 200.0], probe_heights: vec![100.0, 200.0, 400.0], ..Default::default() };
    let r = dual_experiment(&FieldParams::default(), &p).unwrap().report;
    let mut l = verdicts(&r, &["out_degree_one", "acyclic", "primal_dual_crossings", "multi_component_non_increasing"]);
    l.detail += &format!(", {}", r.verdict("multi_component_non_increasing").unwrap().detail);
    l
}

fn criterion_10() -> Line {
    let p = EtaParams { n: 50, epsilons: vec![0.4, 0.2, 0.1, 0.05], trials: ETA_TRIALS, ..Default::default() };
    let r = eta_experiment(&FieldParams::default(), &p).unwrap();
    let mut l = verdicts(&r, &["p_eta_ge_2_non_increasing", "p_eta_ge_3_over_eps_non_increasing"]);
    l.detail += &format!(
        ", P(eta>=2)={} P(eta>=3)/eps={}",
        r.verdict("p_eta_ge_2_non_increasing").unwrap().detail,
        r.verdict("p_eta_ge_3_over_eps_non_increasing").unwrap().detail
    );
    l
}

/// Small configurations so every experiment finishes in seconds.
fn small_overrides(experiment: &str) -> Vec<&'static str> {
    match experiment {
        "forest" => vec!["forest.half_size=5.0"],
        "coalesce" => vec!["coalesce.trials=40", "coalesce.t_grid=[10.0, 100.0]"],
        "renewals" => vec!["field.delta=2.0", "field.m_d=5", "renewals.runs=3", "renewals.budget=100000", "renewals.target_gaps=20"],
        "increments" => {
            vec!["field.delta=2.0", "field.m_d=5", "increments.runs=3", "increments.budget=100000", "increments.target_samples=20"]
        }
        "donsker" => vec![
            "donsker.n=[10]",
            "donsker.trials=60",
            "donsker.normalization.method=diffusive",
            "donsker.normalization.diffusive_trials=60",
            "donsker.normalization.diffusive_height=100.0",
        ],
        "treeness" => vec!["treeness.k=3", "treeness.trials=20", "treeness.budgets=[100.0, 1000.0]"],
        "foster" => vec!["field.d=3", "field.delta=3.0", "field.m_d=5", "foster.runs=3", "foster.budget=20000"],
        "coupling" => vec!["field.d=3", "coupling.trials=6", "coupling.radii=[2.0, 4.0]", "coupling.separation=20", "coupling.budget=500"],
        "dual" => vec!["dual.sizes=[20.0]", "dual.seeds=3", "dual.probe_heights=[20.0, 40.0]", "dual.probe_width=20.0", "dual.dump=true"],
        "eta" => vec![
            "eta.n=10",
            "eta.trials=30",
            "eta.normalization.method=diffusive",
            "eta.normalization.diffusive_trials=60",
            "eta.normalization.diffusive_height=100.0",
        ],
        "dump-paths" => vec!["dump_paths.count=4", "dump_paths.height=30.0"],
        _ => unreachable!(),
    }
}

fn criterion_11() -> Line {
    let root = std::env::temp_dir().join(format!("pdsf-acceptance-{}", std::process::id()));
    let mut differing = Vec::new();
    for e in EXPERIMENTS {
        let mut outputs = Vec::new();
        for (run, workers) in [(0, 1usize), (1, 1), (2, 3)] {
            let args = Args {
                experiment: Some(e.into()),
                seed: Some(7),
                workers: Some(workers),
                set: small_overrides(e).into_iter().map(String::from).collect(),
                ..Default::default()
            };
            let cfg = resolve_config(None, &args).unwrap();
            let dir = root.join(format!("{e}-{run}"));
            let files = emit_report(&run_experiment(&cfg).unwrap(), &dir, &cfg.stem()).unwrap();
            let bytes: Vec<(String, Vec<u8>)> =
                files.iter().map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(f).unwrap())).collect();
            outputs.push(bytes);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            differing.push(e);
        }
    }
    let _ = fs::remove_dir_all(&root);
    Line {
        passed: differing.is_empty(),
        detail: format!("{} experiments x 3 runs (workers 1, 1, 3); differing: {differing:?}", EXPERIMENTS.len()),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("geometric invariants", criterion_1),
        ("h-step oracle equivalence", criterion_2),
        ("renewal tail", criterion_3),
        ("increment structure", criterion_4),
        ("coalescence tail", criterion_5),
        ("tree-ness", criterion_6),
        ("Donsker marginal", criterion_7),
        ("Foster drift", criterion_8),
        ("dual consistency", criterion_9),
        ("eta trends", criterion_10),
        ("determinism", criterion_11),
    ];
    let only: Option<usize> = std::env::var("PDSF_CRITERION").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let t = Instant::now();
        let line = f();
        let status = if line.passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status} {name} [{:.1}s]: {}", i + 1, t.elapsed().as_secs_f64(), line.detail);
        if !line.passed {
            failed += 1;
        }
    }
    println!("acceptance: {failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
