//! Seeded generator for a synthetic city: a lattice street network, bus and
//! rail timetables, census cells, schools and delay observations. Used for
//! load testing and demos.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gtfs::{self, format_time, FeedVariant, Route, RouteCategory, Seconds, ServiceCalendar, Stop, StopKind, StopTime, TimetableFeed, Trip};
use crate::street::LocalFrame;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Gtfs(#[from] gtfs::GtfsError),
    #[error("{0}")]
    Params(String),
}

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub seed: u64,
    pub cells: usize,
    pub schools: usize,
    pub bus_routes: usize,
    pub rail_lines: usize,
    pub days: Vec<NaiveDate>,
    /// Share of active bus trips that appear in the observation files.
    pub observed_share: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let first = NaiveDate::from_ymd_opt(2025, 12, 22).expect("valid date");
        SynthParams {
            seed: 7,
            cells: 1244,
            schools: 9,
            bus_routes: 46,
            rail_lines: 4,
            days: (0..5).map(|i| first + Duration::days(i)).collect(),
            observed_share: 0.8,
        }
    }
}

const LAT0: f64 = 36.20;
const LON0: f64 = 137.95;
const CELL_M: f64 = 250.0;
/// Street lattice spacing; cell centroids fall on lattice nodes.
const STEP_M: f64 = 125.0;
const COLS: usize = 40;

struct City {
    nx: usize,
    ny: usize,
    frame: LocalFrame,
}

impl City {
    fn node_id(&self, ix: usize, iy: usize) -> String {
        format!("n{ix}_{iy}")
    }
    fn latlon(&self, ix: usize, iy: usize) -> (f64, f64) {
        self.frame.to_latlon(ix as f64 * STEP_M, iy as f64 * STEP_M)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, SynthError> {
    csv::Writer::from_path(path).map_err(|source| SynthError::Csv { path: path.to_path_buf(), source })
}

macro_rules! row {
    ($w:expr, $path:expr, $($f:expr),+ $(,)?) => {
        $w.write_record([$($f.to_string()),+]).map_err(|source| SynthError::Csv { path: $path.to_path_buf(), source })?
    };
}

/// Write a complete study under `out` and return the path of its config.
pub fn generate(params: &SynthParams, out: &Path) -> Result<PathBuf, SynthError> {
    if params.cells == 0 || params.schools == 0 || params.days.is_empty() {
        return Err(SynthError::Params("cells, schools and days must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rows = params.cells.div_ceil(COLS);
    let city = City { nx: 2 * COLS + 1, ny: 2 * rows + 1, frame: LocalFrame::new(LAT0, LON0) };
    fs::create_dir_all(out.join("street")).map_err(io_err(out))?;
    fs::create_dir_all(out.join("observations")).map_err(io_err(out))?;

    write_street(&city, &mut rng, out)?;
    write_cells(&city, params, rows, &mut rng, out)?;
    write_schools(&city, params, &mut rng, out)?;
    let feed = build_feed(&city, params, &mut rng);
    gtfs::write_feed(&feed, &out.join("gtfs"))?;
    for &day in &params.days {
        write_observations(&feed, day, params.observed_share, &mut rng, &out.join("observations").join(format!("{day}.csv")))?;
    }
    write_config(params, out)
}

fn write_street(city: &City, rng: &mut ChaCha8Rng, out: &Path) -> Result<(), SynthError> {
    let path = out.join("street/nodes.csv");
    let mut w = csv_writer(&path)?;
    row!(w, path, "node_id", "lat", "lon");
    for iy in 0..city.ny {
        for ix in 0..city.nx {
            let (lat, lon) = city.latlon(ix, iy);
            row!(w, path, city.node_id(ix, iy), format!("{lat:.7}"), format!("{lon:.7}"));
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = out.join("street/edges.csv");
    let mut w = csv_writer(&path)?;
    row!(w, path, "from", "to", "length_m", "walk", "cycle");
    for iy in 0..city.ny {
        for ix in 0..city.nx {
            let mut nbrs = Vec::new();
            if ix + 1 < city.nx {
                nbrs.push((ix + 1, iy));
            }
            if iy + 1 < city.ny {
                nbrs.push((ix, iy + 1));
            }
            for (jx, jy) in nbrs {
                // Winding streets: up to 15% longer than the straight line.
                let len = STEP_M * (1.0 + rng.random_range(0.0..0.15));
                // A few arterials are closed to walking, a few paths to bikes.
                let r: f64 = rng.random();
                let (walk, cycle) = if r < 0.02 { (0, 1) } else if r < 0.05 { (1, 0) } else { (1, 1) };
                row!(w, path, city.node_id(ix, iy), city.node_id(jx, jy), format!("{len:.1}"), walk, cycle);
            }
        }
    }
    w.flush().map_err(io_err(&path))
}

fn write_cells(city: &City, params: &SynthParams, rows: usize, rng: &mut ChaCha8Rng, out: &Path) -> Result<(), SynthError> {
    let path = out.join("cells.csv");
    let mut w = csv_writer(&path)?;
    row!(w, path, "cell_id", "lat", "lon", "population_u15", "district", "area");
    let (cx, cy) = (COLS as f64 * CELL_M / 2.0, rows as f64 * CELL_M / 2.0);
    for i in 0..params.cells {
        let (c, r) = (i % COLS, i / COLS);
        let (lat, lon) = city.latlon(2 * c + 1, 2 * r + 1);
        let (x, y) = ((c as f64 + 0.5) * CELL_M, (r as f64 + 0.5) * CELL_M);
        let dist = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let dense = (1.0 - dist / 6000.0).max(0.1);
        let pop = if rng.random::<f64>() < 0.08 { 0.0 } else { (rng.random_range(0.0..140.0) * dense).round() };
        let district = format!("D{}", 1 + (3 * r / rows.max(1)).min(2) * 3 + (3 * c / COLS).min(2));
        let area = if dist < 3000.0 { "urban" } else { "suburban" };
        row!(w, path, format!("C{i:04}"), format!("{lat:.7}"), format!("{lon:.7}"), pop, district, area);
    }
    w.flush().map_err(io_err(&path))
}

fn write_schools(city: &City, params: &SynthParams, rng: &mut ChaCha8Rng, out: &Path) -> Result<(), SynthError> {
    let path = out.join("schools.csv");
    let mut w = csv_writer(&path)?;
    row!(w, path, "school_id", "name", "lat", "lon");
    let mut used = BTreeSet::new();
    let mut k = 0;
    while k < params.schools {
        let ix = rng.random_range(city.nx / 6..city.nx * 5 / 6);
        let iy = rng.random_range(city.ny / 6..city.ny * 5 / 6);
        if !used.insert((ix / 8, iy / 8)) {
            continue;
        }
        // Slightly off the street so snapping has something to do.
        let (lat, lon) = city.frame.to_latlon(ix as f64 * STEP_M + 30.0, iy as f64 * STEP_M + 20.0);
        k += 1;
        row!(w, path, format!("SCH{k}"), format!("High School {k}"), format!("{lat:.7}"), format!("{lon:.7}"));
    }
    w.flush().map_err(io_err(&path))
}

fn calendar(id: &str, mask: [bool; 7], days: &[NaiveDate]) -> ServiceCalendar {
    let start = *days.iter().min().expect("days");
    let end = *days.iter().max().expect("days");
    ServiceCalendar {
        service_id: id.into(),
        weekdays: mask,
        range: Some((start - Duration::days(30), end + Duration::days(30))),
        added: BTreeSet::new(),
        removed: BTreeSet::new(),
    }
}

/// Straight line of lattice nodes.
fn lattice_line(horizontal: bool, fixed: usize, from: usize, to: usize, every: usize) -> Vec<(usize, usize)> {
    (from..=to).step_by(every).map(|i| if horizontal { (i, fixed) } else { (fixed, i) }).collect()
}

#[allow(clippy::too_many_arguments)]
fn add_trips(
    feed: &mut TimetableFeed,
    route: &str,
    service: &str,
    stops: &[String],
    first: Seconds,
    last: Seconds,
    headway: impl Fn(Seconds) -> Seconds,
    segment: Seconds,
    dwell: Seconds,
) {
    for (dir, seq) in [(0, stops.to_vec()), (1, stops.iter().rev().cloned().collect::<Vec<_>>())] {
        let mut t = first + dir * 240;
        let mut n = 0;
        while t <= last {
            let mut clock = t;
            let stop_times = seq
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let arr = clock;
                    let dep = if i == 0 || i + 1 == seq.len() { arr } else { arr + dwell };
                    clock = dep + segment;
                    StopTime { stop_id: s.clone(), stop_sequence: i as u32 + 1, arrival: arr, departure: dep }
                })
                .collect();
            let id = format!("{route}_{dir}_{n:03}");
            feed.trips.insert(id.clone(), Trip { id, route_id: route.into(), service_id: service.into(), stop_times });
            n += 1;
            t += headway(t);
        }
    }
}

fn build_feed(city: &City, params: &SynthParams, rng: &mut ChaCha8Rng) -> TimetableFeed {
    let mut feed = TimetableFeed::empty(FeedVariant::Scheduled);
    let wd = [true, true, true, true, true, false, false];
    let mwf = [true, false, true, false, true, false, false];
    let tth = [false, true, false, true, false, false, false];
    for (id, mask) in [("WD", wd), ("MWF", mwf), ("TTH", tth)] {
        feed.calendars.insert(id.into(), calendar(id, mask, &params.days));
    }
    let hm = |h: u32, m: u32| h * 3600 + m * 60;

    for l in 0..params.rail_lines {
        // Short cities get only east-west lines.
        let horizontal = l % 2 == 0 || city.ny < 16;
        let span = if horizontal { city.nx } else { city.ny };
        let across = if horizontal { city.ny } else { city.nx };
        let (k, count) = if city.ny < 16 {
            (l, params.rail_lines)
        } else if horizontal {
            (l / 2, params.rail_lines.div_ceil(2))
        } else {
            (l / 2, params.rail_lines / 2)
        };
        let fixed = across * (k + 1) / (count + 1);
        let route = format!("R{}", l + 1);
        let mut stops = Vec::new();
        for (k, (ix, iy)) in lattice_line(horizontal, fixed, 2, span - 3, 12).into_iter().enumerate() {
            let id = format!("{route}S{k:02}");
            let (lat, lon) = city.latlon(ix, iy);
            feed.stops.insert(id.clone(), Stop { id: id.clone(), name: format!("{route} Station {k}"), lat, lon, kind: StopKind::RailStation });
            stops.push(id);
        }
        feed.routes.insert(route.clone(), Route { id: route.clone(), name: format!("Line {}", l + 1), category: RouteCategory::Rail });
        let peak = move |t: Seconds| if (hm(6, 30)..hm(9, 0)).contains(&t) || (hm(16, 0)..hm(19, 0)).contains(&t) { 900 } else { 1800 };
        add_trips(&mut feed, &route, "WD", &stops, hm(5, 30) + 60 * l as u32, hm(22, 30), peak, 90, 30);
    }

    for b in 0..params.bus_routes {
        let horizontal = rng.random::<bool>() || city.ny < 16;
        let (span, across) = if horizontal { (city.nx, city.ny) } else { (city.ny, city.nx) };
        let fixed = rng.random_range(1..across - 1);
        let len = rng.random_range(span / 3..span * 3 / 4);
        let from = rng.random_range(0..span - len);
        let route = format!("B{:02}", b + 1);
        let local = b % 5 == 4;
        let mut stops = Vec::new();
        for (k, (ix, iy)) in lattice_line(horizontal, fixed, from, from + len, 3).into_iter().enumerate() {
            let id = format!("{route}S{k:02}");
            // Stops sit on the kerb, a few metres off the node.
            let (lat, lon) = city.frame.to_latlon(ix as f64 * STEP_M + 8.0, iy as f64 * STEP_M + 8.0);
            feed.stops.insert(id.clone(), Stop { id: id.clone(), name: format!("{route} stop {k}"), lat, lon, kind: StopKind::BusStop });
            stops.push(id);
        }
        let category = if local { RouteCategory::Local } else { RouteCategory::Regular };
        feed.routes.insert(route.clone(), Route { id: route.clone(), name: format!("Bus {}", b + 1), category });
        let service = if local { ["MWF", "TTH"][b % 2] } else { "WD" };
        let headway = if local { 3600 } else { [900, 1200, 1800][rng.random_range(0..3)] };
        let offset = rng.random_range(0..headway / 60) * 60;
        add_trips(&mut feed, &route, service, &stops, hm(6, 0) + offset, hm(20, 0), move |_| headway, 75, 15);
    }
    feed
}

/// One poll per stop departure of each observed bus trip, with a delay that
/// drifts along the trip.
fn write_observations(feed: &TimetableFeed, day: NaiveDate, share: f64, rng: &mut ChaCha8Rng, path: &Path) -> Result<(), SynthError> {
    let mut w = csv_writer(path)?;
    row!(w, path, "poll_time", "vehicle_id", "route_id", "prev_stop_id", "next_stop_id", "prev_departure", "delay_s");
    let active = gtfs::active_trips(feed, day);
    let midnight = day.and_hms_opt(0, 0, 0).expect("midnight");
    let mut rows: BTreeMap<(i64, String, u32), [String; 7]> = BTreeMap::new();
    for trip in feed.trips.values().filter(|t| active.contains(&t.id)) {
        if feed.routes[&trip.route_id].category == RouteCategory::Rail || rng.random::<f64>() >= share {
            continue;
        }
        let first = trip.stop_times[0].departure;
        let peak = (7 * 3600..9 * 3600).contains(&first) || (16 * 3600..19 * 3600).contains(&first);
        let mut delay: i64 = rng.random_range(-30..if peak { 240 } else { 90 });
        let mut last_dep = 0i64;
        for pair in trip.stop_times.windows(2) {
            delay = (delay + rng.random_range(-20..if peak { 50 } else { 25 })).max(-60);
            let dep = (pair[0].departure as i64 + delay).max(last_dep);
            delay = dep - pair[0].departure as i64;
            last_dep = dep;
            let poll = dep + rng.random_range(5..55);
            let when = midnight + Duration::seconds(poll);
            rows.insert(
                (poll, trip.id.clone(), pair[0].stop_sequence),
                [
                    when.format("%Y-%m-%dT%H:%M:%S").to_string(),
                    format!("V{}", trip.id),
                    trip.route_id.clone(),
                    pair[0].stop_id.clone(),
                    pair[1].stop_id.clone(),
                    format_time(dep as Seconds),
                    delay.to_string(),
                ],
            );
        }
    }
    for r in rows.into_values() {
        w.write_record(&r).map_err(|source| SynthError::Csv { path: path.to_path_buf(), source })?;
    }
    w.flush().map_err(io_err(path))
}

fn write_config(params: &SynthParams, out: &Path) -> Result<PathBuf, SynthError> {
    let days: Vec<String> = params.days.iter().map(|d| format!("\"{d}\"")).collect();
    let mut s = format!(
        "days = [{}]\noutput_dir = \"out\"\nthresholds_min = [60, 90, 120]\n\n[inputs]\ngtfs = \"gtfs\"\nnodes = \"street/nodes.csv\"\nedges = \"street/edges.csv\"\ncells = \"cells.csv\"\nschools = \"schools.csv\"\n\n[inputs.observations]\n",
        days.join(", ")
    );
    for d in &params.days {
        s += &format!("{d} = \"observations/{d}.csv\"\n");
    }
    s += &format!("\n[indices]\nseed = {}\n", params.seed);
    let path = out.join("study.toml");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(s.as_bytes()).map_err(io_err(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StudyConfig;

    #[test]
    fn small_city_is_valid_and_seeded() {
        let params = SynthParams { cells: 60, schools: 2, bus_routes: 4, rail_lines: 1, days: SynthParams::default().days[..1].to_vec(), ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg_path = generate(&params, a.path()).unwrap();
        generate(&params, b.path()).unwrap();
        for f in ["cells.csv", "schools.csv", "street/edges.csv", "gtfs/stop_times.txt", "observations/2025-12-22.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let cfg = StudyConfig::load(&cfg_path).unwrap();
        let feed = gtfs::parse_feed(&cfg.inputs.gtfs).unwrap();
        assert!(gtfs::validate_feed(&feed).is_empty());
        assert_eq!(feed.routes.len(), 5);
        let cells = crate::street::load_cells(&cfg.inputs.cells).unwrap();
        assert_eq!(cells.len(), 60);
    }
}
