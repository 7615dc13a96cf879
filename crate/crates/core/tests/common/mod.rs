//! Shared test helpers: toyville loading, micro-feed generation and a
//! brute-force router/matrix oracle that enumerates itineraries directly from
//! the feed.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transit_access::config::StudyConfig;
use transit_access::gtfs::{FeedVariant, Route, RouteCategory, Seconds, Stop, StopKind, StopTime, TimetableFeed, Trip};
use transit_access::router::{Percentile, RouterConfig, TimeWindow};
use transit_access::street::{AccessTable, AccessTables, Mode};

pub fn toyville_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toyville")
}

pub fn day(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Toyville config `name` with outputs redirected to `out`.
pub fn toyville_config(name: &str, out: &Path) -> StudyConfig {
    let mut cfg = StudyConfig::load(&toyville_dir().join(name)).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Same, written to `<out>/<name>` with absolute paths, for the CLI.
pub fn write_toyville_config(name: &str, out: &Path) -> PathBuf {
    let cfg = toyville_config(name, &out.join("out"));
    let path = out.join(name);
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    path
}

pub fn hm(h: u32, m: u32) -> Seconds {
    h * 3600 + m * 60
}

// ---------------------------------------------------------------------------
// Micro feeds

pub struct MicroCase {
    pub feed: TimetableFeed,
    pub transfers: AccessTable,
    /// (stop, cycle, seconds)
    pub access: Vec<(String, bool, u32)>,
    pub egress: Vec<(String, u32)>,
    pub walk_only: Option<u32>,
    pub deadline: Option<Seconds>,
}

/// Random feed with at most 10 stops, 6 trips and 3 routes.
pub fn micro_case(seed: u64) -> MicroCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_stops = rng.random_range(3..=10);
    let n_routes = rng.random_range(1..=3);
    let n_trips = rng.random_range(1..=6);
    let mut feed = TimetableFeed::empty(FeedVariant::Scheduled);
    for i in 0..n_stops {
        let id = format!("S{i}");
        let kind = if rng.random_bool(0.3) { StopKind::RailStation } else { StopKind::BusStop };
        feed.stops.insert(id.clone(), Stop { id: id.clone(), name: id, lat: 0.0, lon: 0.0, kind });
    }
    for r in 0..n_routes {
        let id = format!("R{r}");
        feed.routes.insert(id.clone(), Route { id: id.clone(), name: id, category: RouteCategory::Regular });
    }
    for t in 0..n_trips {
        let len = rng.random_range(2..=n_stops.min(5));
        let mut pool: Vec<usize> = (0..n_stops).collect();
        let mut stops = Vec::new();
        for _ in 0..len {
            stops.push(pool.swap_remove(rng.random_range(0..pool.len())));
        }
        let mut clock = hm(6, 0) + rng.random_range(0..100) * 60 + rng.random_range(0..4) * 15;
        let stop_times = stops
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let arrival = clock;
                let departure = arrival + if rng.random_bool(0.3) { rng.random_range(0..90) } else { 0 };
                clock = departure + rng.random_range(60..900);
                StopTime { stop_id: format!("S{s}"), stop_sequence: i as u32 + 1, arrival, departure }
            })
            .collect();
        let id = format!("T{t}");
        let route_id = format!("R{}", rng.random_range(0..n_routes));
        feed.trips.insert(id.clone(), Trip { id, route_id, service_id: "WK".into(), stop_times });
    }
    let mut transfers = AccessTable::new(Mode::Walk);
    for a in 0..n_stops {
        for b in a + 1..n_stops {
            if rng.random_bool(0.2) {
                transfers.entries.insert((format!("S{a}"), format!("S{b}")), rng.random_range(0..=120));
            }
        }
    }
    let pick = |rng: &mut ChaCha8Rng| format!("S{}", rng.random_range(0..n_stops));
    let access = (0..rng.random_range(1..=4)).map(|_| (pick(&mut rng), rng.random_bool(0.3), rng.random_range(0..900))).collect();
    let egress = (0..rng.random_range(1..=3)).map(|_| (pick(&mut rng), rng.random_range(0..600))).collect();
    let walk_only = rng.random_bool(0.3).then(|| rng.random_range(600..4000));
    let deadline = rng.random_bool(0.5).then(|| hm(7, 0) + rng.random_range(0..100) * 60);
    MicroCase { feed, transfers, access, egress, walk_only, deadline }
}

// ---------------------------------------------------------------------------
// Brute-force itinerary enumeration

/// One way of reaching the destination after boarding at `board_stop`.
#[derive(Debug, Clone, Copy)]
pub struct Journey {
    pub board_dep: Seconds,
    pub arrival: Seconds,
    pub rides: u8,
}

/// All itineraries with one or two rides that end at the destination, by
/// boarding stop. A transfer needs the walk plus `slack`; staying at the
/// same stop is a zero-second walk.
pub fn enumerate_journeys(
    feed: &TimetableFeed,
    transfers: &AccessTable,
    egress: &[(String, u32)],
    slack: u32,
    deadline: Option<Seconds>,
) -> BTreeMap<String, Vec<Journey>> {
    let mut eg: BTreeMap<&str, u32> = BTreeMap::new();
    for (s, secs) in egress {
        let e = eg.entry(s.as_str()).or_insert(*secs);
        *e = (*e).min(*secs);
    }
    let mut walks: BTreeMap<&str, BTreeMap<&str, u32>> = BTreeMap::new();
    for s in feed.stops.keys() {
        walks.entry(s.as_str()).or_default().insert(s.as_str(), 0);
    }
    for ((a, b), &secs) in &transfers.entries {
        if a == b || !feed.stops.contains_key(a) || !feed.stops.contains_key(b) {
            continue;
        }
        for (x, y) in [(a, b), (b, a)] {
            let e = walks.entry(x.as_str()).or_default().entry(y.as_str()).or_insert(secs);
            *e = (*e).min(secs);
        }
    }
    let ok = |arr: Seconds| deadline.is_none_or(|d| arr <= d);
    let mut out: BTreeMap<String, Vec<Journey>> = BTreeMap::new();
    let trips: Vec<&Trip> = feed.trips.values().collect();
    for t1 in &trips {
        let st = &t1.stop_times;
        for i in 0..st.len() {
            for j in i + 1..st.len() {
                if let Some(e) = eg.get(st[j].stop_id.as_str()) {
                    let arrival = st[j].arrival + e;
                    if ok(arrival) {
                        out.entry(st[i].stop_id.clone()).or_default().push(Journey { board_dep: st[i].departure, arrival, rides: 1 });
                    }
                }
                for (to, &w) in &walks[st[j].stop_id.as_str()] {
                    let ready = st[j].arrival + w + slack;
                    for t2 in &trips {
                        let s2 = &t2.stop_times;
                        for k in 0..s2.len() {
                            if s2[k].stop_id != *to || s2[k].departure < ready {
                                continue;
                            }
                            for alight in &s2[k + 1..] {
                                if let Some(e) = eg.get(alight.stop_id.as_str()) {
                                    let arrival = alight.arrival + e;
                                    if ok(arrival) {
                                        out.entry(st[i].stop_id.clone()).or_default().push(Journey { board_dep: st[i].departure, arrival, rides: 2 });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Router ordering: arrival, then walking before cycling, then fewer rides,
/// then the access stop's position in sorted stop-id order.
pub type Key = (Seconds, u8, u8, u32);

pub fn best_key(
    feed: &TimetableFeed,
    journeys: &BTreeMap<String, Vec<Journey>>,
    access: &[(String, bool, u32)],
    walk_only: Option<u32>,
    deadline: Option<Seconds>,
    departure: Seconds,
) -> Option<Key> {
    let order: BTreeMap<&str, u32> = feed.stops.keys().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
    let mut best: Option<Key> = None;
    let mut offer = |k: Key| {
        if best.is_none_or(|b| k < b) {
            best = Some(k);
        }
    };
    if let Some(w) = walk_only {
        if deadline.is_none_or(|d| departure + w <= d) {
            offer((departure + w, 0, 0, 0));
        }
    }
    for (stop, cycle, secs) in access {
        let Some(js) = journeys.get(stop) else { continue };
        for j in js.iter().filter(|j| j.board_dep >= departure + secs) {
            offer((j.arrival, *cycle as u8, j.rides, order[stop.as_str()]));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Matrix oracle

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub cell_id: String,
    pub school_id: String,
    pub t_ik: Option<f64>,
    pub outbound: Vec<Option<u32>>,
    pub ret: Vec<Option<u32>>,
    pub outbound_minutes: Vec<Option<Seconds>>,
    pub ret_minutes: Vec<Option<Seconds>>,
}

fn stop_legs(table: &AccessTable, feed: &TimetableFeed, site: &str, cycle: bool) -> Vec<(String, bool, u32)> {
    table
        .entries
        .iter()
        .filter_map(|((a, b), &secs)| {
            let other = if a == site { b } else if b == site { a } else { return None };
            feed.stops.contains_key(other).then(|| (other.clone(), cycle, secs))
        })
        .collect()
}

fn walk_only(tables: &AccessTables, cell: &str, school: &str) -> Option<u32> {
    tables.walk.entries.get(&(cell.to_string(), school.to_string())).or_else(|| tables.walk.entries.get(&(school.to_string(), cell.to_string()))).copied()
}

fn nearest_rank_value(durations: &[Option<u32>], p: Percentile) -> Option<u32> {
    let mut v: Vec<u32> = durations.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort();
    let q = match p {
        Percentile::P25 => 0.25,
        Percentile::P50 => 0.5,
    };
    let rank = ((q * v.len() as f64).ceil() as usize).max(1);
    Some(v[rank - 1])
}

struct Side<'a> {
    feed: &'a TimetableFeed,
    journeys: BTreeMap<String, Vec<Journey>>,
    access: Vec<(String, bool, u32)>,
    walk_only: Option<u32>,
    deadline: Option<Seconds>,
}

impl Side<'_> {
    fn at(&self, m: Seconds) -> Option<Key> {
        best_key(self.feed, &self.journeys, &self.access, self.walk_only, self.deadline, m)
    }
}

/// Per window: (value, minute, key at minute) on `sched`, conditioned on
/// `actual` when given.
fn windows_eval(windows: &[TimeWindow], p: Percentile, sched: &Side, actual: Option<&Side>) -> Vec<(Option<u32>, Option<Seconds>, Option<Key>)> {
    windows
        .iter()
        .map(|w| {
            let minutes: Vec<Seconds> = (w.start..w.end).step_by(60).collect();
            let keys: Vec<Option<Key>> = minutes.iter().map(|&m| sched.at(m)).collect();
            let durs: Vec<Option<u32>> = keys.iter().zip(&minutes).map(|(k, &m)| k.map(|k| k.0 - m)).collect();
            match nearest_rank_value(&durs, p) {
                None => (None, None, None),
                Some(v) => {
                    let i = durs.iter().position(|d| *d == Some(v)).unwrap();
                    let m = minutes[i];
                    let value = match actual {
                        None => Some(v),
                        Some(a) => a.at(m).map(|k| k.0 - m),
                    };
                    (value, Some(m), keys[i])
                }
            }
        })
        .collect()
}

fn eq1(values: &[Option<u32>], windows: &[TimeWindow], strict: bool) -> Option<f64> {
    if strict && values.iter().any(Option::is_none) {
        return None;
    }
    let mut num = 0.0;
    let mut feasible = 0.0;
    let mut total = 0.0;
    for (v, w) in values.iter().zip(windows) {
        total += w.share;
        if let Some(v) = v {
            num += *v as f64 * w.share;
            feasible += w.share;
        }
    }
    if feasible <= 0.0 {
        None
    } else if feasible == total {
        Some(num)
    } else {
        Some(num / feasible)
    }
}

fn out_side<'a>(f: &'a TimetableFeed, tables: &AccessTables, cell: &str, school: &str, cfg: &RouterConfig) -> Side<'a> {
    let egress: Vec<(String, u32)> = stop_legs(&tables.walk, f, school, false).into_iter().map(|(s, _, secs)| (s, secs)).collect();
    let mut access = stop_legs(&tables.walk, f, cell, false);
    access.extend(stop_legs(&tables.cycle, f, cell, true));
    Side {
        feed: f,
        journeys: enumerate_journeys(f, &tables.transfers, &egress, cfg.transfer_slack_s, cfg.deadline),
        access,
        walk_only: walk_only(tables, cell, school),
        deadline: cfg.deadline,
    }
}

fn ret_side<'a>(f: &'a TimetableFeed, tables: &AccessTables, cell: &str, school: &str, bike: Option<&str>, cfg: &RouterConfig) -> Side<'a> {
    let egress: Vec<(String, u32)> = match bike {
        None => stop_legs(&tables.walk, f, cell, false).into_iter().map(|(s, _, secs)| (s, secs)).collect(),
        Some(st) => stop_legs(&tables.cycle, f, cell, true).into_iter().filter(|(s, _, _)| s == st).map(|(s, _, secs)| (s, secs)).collect(),
    };
    Side {
        feed: f,
        journeys: enumerate_journeys(f, &tables.transfers, &egress, cfg.transfer_slack_s, None),
        access: stop_legs(&tables.walk, f, school, false),
        walk_only: if bike.is_none() { walk_only(tables, cell, school) } else { None },
        deadline: None,
    }
}

/// Round-trip matrix computed by enumeration. `sched` and `actual` are feeds
/// already restricted to the day.
pub fn oracle_matrix(
    sched: &TimetableFeed,
    actual: Option<&TimetableFeed>,
    tables: &AccessTables,
    cells: &[String],
    schools: &[String],
    cfg: &RouterConfig,
) -> Vec<OracleRow> {
    let mut rows = Vec::new();
    for cell in cells {
        for school in schools {
            let s_out = out_side(sched, tables, cell, school, cfg);
            let a_out = actual.map(|f| out_side(f, tables, cell, school, cfg));
            let out = windows_eval(&cfg.morning, cfg.percentile, &s_out, a_out.as_ref());

            // reference window: largest share among feasible, earliest on ties
            let mut reference: Option<usize> = None;
            for (i, r) in out.iter().enumerate() {
                if r.1.is_some() && reference.is_none_or(|b| cfg.morning[i].share > cfg.morning[b].share) {
                    reference = Some(i);
                }
            }
            let bike: Option<String> = reference.and_then(|i| out[i].2).and_then(|k| {
                (k.1 == 1).then(|| sched.stops.keys().nth(k.3 as usize).unwrap().clone())
            });

            let s_ret = ret_side(sched, tables, cell, school, bike.as_deref(), cfg);
            let a_ret = actual.map(|f| ret_side(f, tables, cell, school, bike.as_deref(), cfg));
            let ret = windows_eval(&cfg.evening, cfg.percentile, &s_ret, a_ret.as_ref());

            let ov: Vec<Option<u32>> = out.iter().map(|r| r.0).collect();
            let rv: Vec<Option<u32>> = ret.iter().map(|r| r.0).collect();
            let t_ik = match (eq1(&ov, &cfg.morning, cfg.strict_window_exclusion), eq1(&rv, &cfg.evening, cfg.strict_window_exclusion)) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
            rows.push(OracleRow {
                cell_id: cell.clone(),
                school_id: school.clone(),
                t_ik,
                outbound: ov,
                ret: rv,
                outbound_minutes: out.iter().map(|r| r.1).collect(),
                ret_minutes: ret.iter().map(|r| r.1).collect(),
            });
        }
    }
    rows
}

/// Piecewise decay written out independently: full weight up to T, linear
/// to zero at 2T.
pub fn oracle_decay(t: Option<f64>, threshold_s: f64) -> f64 {
    match t {
        None => 0.0,
        Some(t) if t <= threshold_s => 1.0,
        Some(t) if t <= 2.0 * threshold_s => (2.0 * threshold_s - t) / threshold_s,
        Some(_) => 0.0,
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
}

/// Parse a CSV file into header-keyed rows.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().clone();
    r.records().map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()).collect()
}

pub fn distinct<T: Ord + Clone>(v: impl IntoIterator<Item = T>) -> BTreeSet<T> {
    v.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Router side of a micro case

pub struct Compiled {
    pub tt: transit_access::router::Timetable,
    pub dest: transit_access::router::DestinationProfile,
    pub origin: transit_access::router::Origin,
}

pub fn compile_case(case: &MicroCase, slack: u32) -> Compiled {
    use transit_access::router::{AccessLeg, DestinationProfile, Origin, Timetable};
    let tt = Timetable::compile(&case.feed, &case.transfers, 0, Seconds::MAX);
    let egress: Vec<AccessLeg> = case
        .egress
        .iter()
        .map(|(s, secs)| AccessLeg { stop: tt.stop_index(s).unwrap(), mode: Mode::Walk, secs: *secs })
        .collect();
    let legs = case
        .access
        .iter()
        .map(|(s, cycle, secs)| AccessLeg { stop: tt.stop_index(s).unwrap(), mode: if *cycle { Mode::Cycle } else { Mode::Walk }, secs: *secs })
        .collect();
    let dest = DestinationProfile::build(&tt, &egress, slack, case.deadline);
    Compiled { tt, dest, origin: Origin::new(legs, case.walk_only) }
}

pub fn choice_key(c: &transit_access::router::Choice) -> Key {
    use transit_access::router::Via;
    match c.via {
        Via::WalkOnly => (c.arrival, 0, 0, 0),
        Via::Transit { leg, rides, .. } => (c.arrival, (leg.mode == Mode::Cycle) as u8, rides, leg.stop),
    }
}

/// Minutes at which the router and the enumeration disagree, over
/// 05:30 to 08:30.
pub fn oracle_discrepancies(case: &MicroCase) -> Vec<(Seconds, Option<Key>, Option<Key>)> {
    use transit_access::router::{profile, TimeWindow};
    let c = compile_case(case, 60);
    let journeys = enumerate_journeys(&case.feed, &case.transfers, &case.egress, 60, case.deadline);
    let mut bad = Vec::new();
    for k in 0..6 {
        let start = hm(5, 30) + k * 1800;
        let prof = profile(&c.dest, &c.origin, &TimeWindow { start, end: start + 1800, share: 1.0 });
        for (m, choice) in prof.minutes.iter().zip(&prof.choices) {
            let got = choice.as_ref().map(choice_key);
            let want = best_key(&case.feed, &journeys, &case.access, case.walk_only, case.deadline, *m);
            if got != want {
                bad.push((*m, got, want));
            }
        }
    }
    bad
}
