//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report is always printed.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use transit_access::delay::{self, ObservedTripTrace, SynthesisOptions};
use transit_access::gtfs::{FeedVariant, Route, RouteCategory, Seconds, Stop, StopKind, StopTime, TimetableFeed, Trip};
use transit_access::indices::{self, BootstrapMode, PercentileDirection};
use transit_access::lucky_catch::{self, DetectInput, EventKind, ScheduleLookup};
use transit_access::pipeline::{self, StudyContext};
use transit_access::router::{self, AccessLeg, DayTimetables, DestinationProfile, Origin, RouterConfig, Timetable, TimeWindow, VariantKind, MORNING_SHARES};
use transit_access::street::{AccessTable, Mode};
use transit_access::synth::{self, SynthParams};

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn(),
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "decay exactness", budget: Duration::from_secs(1), run: decay_exactness },
        Criterion { id: 2, name: "window shares and round trip", budget: Duration::from_secs(1), run: window_shares },
        Criterion { id: 3, name: "router matches enumeration", budget: Duration::from_secs(30), run: router_oracle },
        Criterion { id: 4, name: "zero-delay identity", budget: Duration::from_secs(10), run: zero_delay_identity },
        Criterion { id: 5, name: "uniform-shift law", budget: Duration::from_secs(10), run: uniform_shift },
        Criterion { id: 6, name: "imputation examples and fuzz", budget: Duration::from_secs(5), run: imputation },
        Criterion { id: 7, name: "gini closed forms", budget: Duration::from_secs(20), run: gini_closed_forms },
        Criterion { id: 8, name: "district percentile ordering", budget: Duration::from_secs(5), run: district_ordering },
        Criterion { id: 9, name: "lucky catch construction", budget: Duration::from_secs(5), run: lucky_catch_construction },
        Criterion { id: 10, name: "threshold monotonicity", budget: Duration::from_secs(10), run: threshold_monotonicity },
        Criterion { id: 11, name: "full-scale run", budget: Duration::from_secs(300), run: full_scale },
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let took = t0.elapsed();
        let verdict = match outcome {
            Ok(()) if took <= c.budget => "PASS".to_string(),
            Ok(()) => format!("FAIL (over {:?} budget)", c.budget),
            Err(_) => "FAIL".to_string(),
        };
        if verdict != "PASS" {
            failed += 1;
        }
        println!("criterion {:>2} {:<32} {verdict} [{:.2}s]", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn decay_exactness() {
    for t_min in [60u32, 90, 120] {
        let big_t = t_min as f64 * 60.0;
        let grid = [(0.0, 1.0), (0.5, 1.0), (1.0, 1.0), (1.25, 0.75), (1.5, 0.5), (2.0, 0.0)];
        for (f, want) in grid {
            let got = indices::decay(Some(f * big_t), big_t).unwrap();
            assert!((got - want).abs() <= 1e-12, "T={t_min} t={f}T: {got}");
        }
        assert_eq!(indices::decay(Some(2.0 * big_t + 1.0), big_t).unwrap(), 0.0);
        assert_eq!(indices::decay(None, big_t).unwrap(), 0.0);
    }
}

fn window_shares() {
    // thousandths, so the sum is exact
    let milli: u32 = MORNING_SHARES.iter().map(|s| (s * 1000.0).round() as u32).sum();
    assert_eq!(milli, 1000);
    assert!((MORNING_SHARES.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let cfg = RouterConfig::default();
    assert_eq!(cfg.morning.iter().map(|w| w.share).collect::<Vec<_>>(), MORNING_SHARES);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (x, y) = (rng.random_range(0..7200u32), rng.random_range(0..7200u32));
        let out: Vec<_> = cfg.morning.iter().map(|w| (Some(x), w.share)).collect();
        let ret: Vec<_> = cfg.evening.iter().map(|w| (Some(y), w.share)).collect();
        let t = router::round_trip(&out, &ret, false).unwrap();
        assert!((t - (x + y) as f64).abs() <= 1e-9, "{x}+{y} gave {t}");
    }
}

fn router_oracle() {
    let mut exercised = 0;
    for seed in 1000..1025 {
        let case = micro_case(seed);
        let bad = oracle_discrepancies(&case);
        assert!(bad.is_empty(), "seed {seed}: {:?}", &bad[..bad.len().min(3)]);
        exercised += case.feed.trips.len();
    }
    assert!(exercised > 25);
}

fn zero_delay_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let ctx = StudyContext::load(toyville_config("study.toml", tmp.path())).unwrap();
    let (cells, schools) = (ctx.cell_ids(), ctx.school_ids());
    let mut sched = BTreeMap::new();
    let mut actual = BTreeMap::new();
    for &d in &ctx.cfg.days {
        let synth = delay::synthesize_actual_feed(&ctx.feed, d, &[], &SynthesisOptions::default());
        let restricted = ctx.feed.restricted_to(d);
        assert_eq!(synth.feed.trips, restricted.trips, "{d}");
        let s = DayTimetables::compile(&restricted, &ctx.tables, &ctx.router);
        let a = DayTimetables::compile(&synth.feed, &ctx.tables, &ctx.router);
        let ms = router::build_matrix(&s, None, &ctx.tables, &cells, &schools, &ctx.router, d);
        let ma = router::build_matrix(&s, Some(&a), &ctx.tables, &cells, &schools, &ctx.router, d);
        for (x, y) in ms.iter().zip(&ma) {
            assert_eq!((x.t_ik, &x.outbound, &x.ret), (y.t_ik, &y.outbound, &y.ret), "{d} {}-{}", x.cell_id, x.school_id);
        }
        sched.insert(d, ms);
        actual.insert(d, ma);
    }
    let records = indices::compute_records(&ctx.cells, &sched, &actual, &ctx.cfg.thresholds_min);
    assert_eq!(records.len(), 20);
    for r in &records {
        for (k, v) in r.per_day.iter() {
            assert_eq!(v.eco_sched, v.eco_actual, "{} {k:?}", r.cell_id);
            assert_eq!(v.ogl, 0.0, "{} {k:?}", r.cell_id);
        }
        assert!(r.medians.values().all(|m| m.ogl == 0.0));
    }
}

fn uniform_shift() {
    let tmp = tempfile::tempdir().unwrap();
    let ctx = StudyContext::load(toyville_config("shift.toml", tmp.path())).unwrap();
    pipeline::cmd_all(ctx.cfg.clone(), &toyville_dir()).unwrap();
    let (mut transit, mut walk) = (0, 0);
    for &d in &ctx.cfg.days {
        let s = pipeline::read_matrix_file(&ctx.layout.matrix(VariantKind::Scheduled, d)).unwrap();
        let a = pipeline::read_matrix_file(&ctx.layout.matrix(VariantKind::Actual, d)).unwrap();
        for (x, y) in s.iter().zip(&a) {
            let walk_only = ctx.tables.walk.get(&x.cell_id, &x.school_id);
            let mut all_walk = true;
            for (ws, wa) in x.outbound.iter().chain(&x.ret).zip(y.outbound.iter().chain(&y.ret)) {
                let Some(sd) = ws.duration else {
                    assert_eq!(wa.duration, None);
                    continue;
                };
                let shift = if Some(sd) == walk_only {
                    walk += 1;
                    0
                } else {
                    all_walk = false;
                    transit += 1;
                    300
                };
                assert_eq!(wa.duration, Some(sd + shift), "{d} {}-{}", x.cell_id, x.school_id);
            }
            if all_walk && x.t_ik.is_some() {
                for t in &ctx.cfg.thresholds_min {
                    let big_t = *t as f64 * 60.0;
                    assert_eq!(indices::decay(y.t_ik, big_t).unwrap(), indices::decay(x.t_ik, big_t).unwrap());
                }
            }
        }
    }
    assert!(transit > 0 && walk > 0);
    let rows = read_csv(&ctx.layout.indices("index.csv"));
    assert_eq!(rows.len(), 20 * 3 * 5);
    for r in rows {
        assert!(r["ogl"].parse::<f64>().unwrap() <= 0.0, "{} T={}", r["cell_id"], r["threshold_min"]);
    }
}

fn sched3() -> Vec<StopTime> {
    (0..3).map(|i| StopTime { stop_id: format!("S{i}"), stop_sequence: i + 1, arrival: hm(8, 5 * i), departure: hm(8, 5 * i) }).collect()
}

fn trace(obs: &[(u32, Seconds)]) -> ObservedTripTrace {
    ObservedTripTrace { trip_id: "T".into(), observed: obs.iter().copied().collect() }
}

fn departures(v: &[StopTime]) -> Vec<Seconds> {
    v.iter().map(|s| s.departure).collect()
}

fn imputation() {
    let got = delay::impute_trace(&sched3(), &trace(&[(1, hm(8, 2)), (3, hm(8, 6))]), 0).unwrap();
    assert_eq!(departures(&got), [hm(8, 2), hm(8, 6), hm(8, 6)]);
    let all = [(1, hm(8, 1)), (2, hm(8, 7)), (3, hm(8, 12))];
    assert_eq!(departures(&delay::impute_trace(&sched3(), &trace(&all), 0).unwrap()), [hm(8, 1), hm(8, 7), hm(8, 12)]);
    let got = delay::impute_trace(&sched3(), &trace(&[(1, hm(8, 3))]), 0).unwrap();
    assert_eq!(departures(&got), [hm(8, 3), hm(8, 8), hm(8, 13)]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut emitted = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..12u32);
        let mut clock = hm(6, 0) + rng.random_range(0..7200);
        let sched: Vec<StopTime> = (0..n)
            .map(|i| {
                let t = clock;
                clock += rng.random_range(0..400);
                StopTime { stop_id: format!("S{i}"), stop_sequence: i + 1, arrival: t, departure: t }
            })
            .collect();
        let mut obs = BTreeMap::new();
        for st in &sched {
            if rng.random_bool(0.4) {
                let delay = rng.random_range(-120i64..900);
                obs.insert(st.stop_sequence, (st.departure as i64 + delay).max(0) as Seconds);
            }
        }
        if obs.is_empty() {
            continue;
        }
        let slack = if rng.random_bool(0.5) { 0 } else { rng.random_range(0..300) };
        let t = ObservedTripTrace { trip_id: format!("T{case}"), observed: obs };
        if let Ok(out) = delay::impute_trace(&sched, &t, slack) {
            emitted += 1;
            assert_eq!(out.len(), sched.len());
            let d = departures(&out);
            assert!(d.windows(2).all(|w| w[0] <= w[1]), "case {case}: {d:?}");
            assert!(out.iter().all(|s| s.arrival == s.departure));
        }
    }
    assert!(emitted > 300, "{emitted}");
}

fn gini_closed_forms() {
    let g = indices::weighted_gini(&[3.0; 7], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    assert!(g.abs() <= 1e-12);
    for x in [0.5, 1.0, 17.0] {
        let g = indices::weighted_gini(&[0.0, x], &[1.0, 1.0]).unwrap();
        assert!((g - 0.5).abs() <= 1e-12, "{g}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..9.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..100.0)).collect();
        let x3: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let (a, b) = (indices::weighted_gini(&x, &w).unwrap(), indices::weighted_gini(&x3, &w).unwrap());
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    let x: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..9.0)).collect();
    let w: Vec<f64> = (0..300).map(|_| rng.random_range(1.0..80.0)).collect();
    for mode in [BootstrapMode::Cells, BootstrapMode::Population] {
        let runs: Vec<_> = (0..3).map(|_| indices::gini_bootstrap(&x, &w, 1000, 42, mode).unwrap()).collect();
        assert!(runs.windows(2).all(|p| p[0] == p[1]));
        assert!(runs[0].ci_low <= runs[0].ci_high);
    }
}

fn district_ordering() {
    let ex = [(1.0, 50.0), (2.0, 30.0), (3.0, 20.0)];
    assert_eq!(indices::district_percentile(&ex, 0.5, PercentileDirection::Attains), Some(2.0));
    assert_eq!(indices::district_percentile(&ex, 0.75, PercentileDirection::Attains), Some(1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(1..30);
        let cells: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0..40) as f64 / 8.0, rng.random_range(1..200) as f64)).collect();
        let p50 = indices::district_percentile(&cells, 0.5, PercentileDirection::Attains).unwrap();
        let p75 = indices::district_percentile(&cells, 0.75, PercentileDirection::Attains).unwrap();
        assert!(p75 <= p50);
        // brute force: largest level attained by at least q of the population
        let total: f64 = cells.iter().map(|c| c.1).sum();
        let attains = |q: f64| {
            cells
                .iter()
                .map(|c| c.0)
                .filter(|&v| cells.iter().filter(|c| c.0 >= v).map(|c| c.1).sum::<f64>() / total >= q - 1e-12)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        assert_eq!((p50, p75), (attains(0.5), attains(0.75)));
    }

    let tmp = tempfile::tempdir().unwrap();
    let cfg = toyville_config("shift.toml", tmp.path());
    pipeline::cmd_all(cfg.clone(), &toyville_dir()).unwrap();
    let rows = read_csv(&cfg.output_dir.join("indices/district.csv"));
    assert_eq!(rows.len(), 3 * 3);
    for r in rows {
        let (p50, p75): (f64, f64) = (r["p50_eco"].parse().unwrap(), r["p75_eco"].parse().unwrap());
        assert!(p75 <= p50, "{} T={}", r["district"], r["threshold_min"]);
    }
}

/// Feeder F (two trips) into connector C (two trips) at X, school near Y.
fn lucky_feed(c1_delay: Seconds) -> TimetableFeed {
    let mut feed = TimetableFeed::empty(FeedVariant::Scheduled);
    for s in ["O", "X", "Y"] {
        feed.stops.insert(s.into(), Stop { id: s.into(), name: s.into(), lat: 0.0, lon: 0.0, kind: StopKind::BusStop });
    }
    for r in ["F", "C"] {
        feed.routes.insert(r.into(), Route { id: r.into(), name: r.into(), category: RouteCategory::Regular });
    }
    let mut trip = |id: &str, route: &str, legs: [(&str, Seconds); 2]| {
        let stop_times = legs
            .iter()
            .enumerate()
            .map(|(i, (s, t))| StopTime { stop_id: s.to_string(), stop_sequence: i as u32 + 1, arrival: *t, departure: *t })
            .collect();
        feed.trips.insert(id.into(), Trip { id: id.into(), route_id: route.into(), service_id: "WK".into(), stop_times });
    };
    trip("F0", "F", [("O", hm(7, 39)), ("X", hm(7, 50))]);
    trip("F1", "F", [("O", hm(7, 40)), ("X", hm(8, 0))]);
    trip("C1", "C", [("X", hm(7, 58) + c1_delay), ("Y", hm(8, 13) + c1_delay)]);
    trip("C2", "C", [("X", hm(8, 30)), ("Y", hm(8, 45))]);
    feed
}

fn lucky_events(actual_feed: &TimetableFeed) -> Vec<lucky_catch::LuckyCatchEvent> {
    let sched_feed = lucky_feed(0);
    let none = AccessTable::new(Mode::Walk);
    let compile = |f: &TimetableFeed| Timetable::compile(f, &none, 0, Seconds::MAX);
    let (st, at) = (compile(&sched_feed), compile(actual_feed));
    let legs = |tt: &Timetable, stop: &str, secs| vec![AccessLeg { stop: tt.stop_index(stop).unwrap(), mode: Mode::Walk, secs }];
    let deadline = Some(hm(9, 0));
    let sd = DestinationProfile::build(&st, &legs(&st, "Y", 300), 60, deadline);
    let ad = DestinationProfile::build(&at, &legs(&at, "Y", 300), 60, deadline);
    let lookup = ScheduleLookup::new(&sched_feed);
    let input = DetectInput { sched: &st, actual: &at, sched_dest: &sd, actual_dest: &ad, lookup: &lookup, slack_s: 60 };
    let window = [TimeWindow { start: hm(7, 11), end: hm(7, 41), share: 1.0 }];
    let so = Origin::new(legs(&st, "O", 0), None);
    let ao = Origin::new(legs(&at, "O", 0), None);
    lucky_catch::detect(&input, &so, &ao, &window, "cell", "school", day("2025-12-22"))
}

fn lucky_catch_construction() {
    let mut delayed = lucky_feed(300);
    delayed.variant = FeedVariant::Actual(day("2025-12-22"));
    let events = lucky_events(&delayed);
    assert_eq!(events.len(), 1, "{events:?}");
    let e = &events[0];
    assert_eq!((e.kind, e.dep_minute, e.saved_s), (EventKind::NewTransfer, hm(7, 40), 1620));
    assert_eq!(e.scheduled.trip_ids(), ["F1", "C2"]);
    assert_eq!(e.actual.trip_ids(), ["F1", "C1"]);
    assert!(lucky_events(&lucky_feed(0)).is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let zero = toyville_config("study.toml", &tmp.path().join("zero"));
    let shift = toyville_config("shift.toml", &tmp.path().join("shift"));
    pipeline::cmd_all(zero.clone(), &toyville_dir()).unwrap();
    pipeline::cmd_all(shift.clone(), &toyville_dir()).unwrap();
    let events = |cfg: &transit_access::config::StudyConfig| -> Vec<BTreeMap<String, String>> {
        cfg.days.iter().flat_map(|d| read_csv(&pipeline::Layout { root: cfg.output_dir.clone() }.events(*d))).collect()
    };
    assert!(events(&zero).is_empty());
    let shifted = events(&shift);
    assert!(!shifted.is_empty());
    assert!(shifted.iter().all(|r| r["kind"] != "new_transfer"));
}

fn threshold_monotonicity() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["study.toml", "shift.toml"] {
        let cfg = toyville_config(name, &tmp.path().join(name));
        pipeline::cmd_all(cfg.clone(), &toyville_dir()).unwrap();
        let mut eco: BTreeMap<(String, String), BTreeMap<u32, (f64, f64)>> = BTreeMap::new();
        for r in read_csv(&cfg.output_dir.join("indices/index.csv")) {
            eco.entry((r["cell_id"].clone(), r["day"].clone()))
                .or_default()
                .insert(r["threshold_min"].parse().unwrap(), (r["eco_sched"].parse().unwrap(), r["eco_actual"].parse().unwrap()));
        }
        assert_eq!(eco.len(), 100);
        for (k, by_t) in eco {
            let v: Vec<_> = by_t.values().collect();
            assert_eq!(by_t.keys().copied().collect::<Vec<_>>(), [60, 90, 120]);
            for w in v.windows(2) {
                assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1, "{name} {k:?}");
            }
        }
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn full_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let params = SynthParams { days: vec![day("2025-12-22")], ..SynthParams::default() };
    assert_eq!((params.cells, params.schools), (1244, 9));
    let cfg_path = synth::generate(&params, &tmp.path().join("city")).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = transit_access::config::StudyConfig::load(&cfg_path).unwrap();
        cfg.output_dir = tmp.path().join(run);
        let t0 = Instant::now();
        pipeline::cmd_all(cfg.clone(), cfg_path.parent().unwrap()).unwrap();
        assert!(t0.elapsed() <= Duration::from_secs(300));
        let rows = read_csv(&cfg.output_dir.join("matrix/scheduled_2025-12-22.csv"));
        assert_eq!(rows.len(), 1244 * 9);
        outputs.push(tree(&cfg.output_dir));
    }
    assert!(outputs[0] == outputs[1], "outputs differ between runs");
}
