//! Delay overlay: polled vehicle observations become per-day "actual
//! operations" feeds.
//!
//! Observations are matched to the scheduled trip they most plausibly belong
//! to, gaps in each trip's observed departures are filled forward along the
//! scheduled segment durations, and any imputed departure that would overtake
//! the next observed one is pulled back to it so departures never reverse
//! along the trip.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use crate::gtfs::{
    active_trips, parse_time, FeedVariant, RouteCategory, Seconds, StopTime, TimetableFeed,
};
use crate::stats::median;

#[derive(Debug, thiserror::Error)]
pub enum DelayError {
    #[error("observation file {0} not found")]
    MissingFile(std::path::PathBuf),
    #[error("observation file is missing column {0:?}")]
    MissingColumn(String),
    #[error("reading observations: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ImputeError {
    #[error("trace has no observed departures")]
    EmptyTrace,
    #[error("observed stop_sequence {0} does not exist in the scheduled trip")]
    UnknownSequence(u32),
    #[error("observed departures decrease at stop_sequence {seq} by {by} s")]
    DecreasingObservations { seq: u32, by: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayObservation {
    pub poll_time: NaiveDateTime,
    pub vehicle_id: String,
    pub route_id: String,
    pub prev_stop_id: String,
    pub next_stop_id: String,
    pub prev_departure: Seconds,
    /// Positive when running late.
    pub delay: i64,
}

impl DelayObservation {
    /// The scheduled departure at the previous stop implied by this record.
    pub fn implied_scheduled(&self) -> i64 {
        self.prev_departure as i64 - self.delay
    }
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub observations: Vec<DelayObservation>,
    pub warnings: Vec<String>,
    pub malformed: usize,
    pub unknown_route: usize,
}

const OBS_COLUMNS: [&str; 7] = [
    "poll_time",
    "vehicle_id",
    "route_id",
    "prev_stop_id",
    "next_stop_id",
    "prev_departure",
    "delay_s",
];

pub fn ingest_observations(path: &Path, feed: Option<&TimetableFeed>) -> Result<Ingested, DelayError> {
    if !path.is_file() {
        return Err(DelayError::MissingFile(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|source| DelayError::Io { path: path.to_path_buf(), source })?;
    ingest_reader(file, feed)
}

fn parse_poll_time(s: &str) -> Option<NaiveDateTime> {
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Read, validate, de-duplicate and sort polled observations. Records for the
/// same vehicle, previous stop and previous departure collapse to the latest
/// poll.
pub fn ingest_reader<R: Read>(reader: R, feed: Option<&TimetableFeed>) -> Result<Ingested, DelayError> {
    let mut out = Ingested::default();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        out.warnings.push("no observations".into());
        return Ok(out);
    }
    let mut idx = [0usize; 7];
    for (slot, col) in idx.iter_mut().zip(OBS_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| DelayError::MissingColumn(col.to_string()))?;
    }
    let mut latest: HashMap<(String, String, Seconds), DelayObservation> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let parsed = (|| {
            let poll_time = parse_poll_time(field(0)).ok_or("poll_time")?;
            let prev_departure = parse_time(field(5)).ok_or("prev_departure")?;
            let delay: i64 = field(6).parse().map_err(|_| "delay_s")?;
            let obs = DelayObservation {
                poll_time,
                vehicle_id: field(1).to_string(),
                route_id: field(2).to_string(),
                prev_stop_id: field(3).to_string(),
                next_stop_id: field(4).to_string(),
                prev_departure,
                delay,
            };
            if obs.vehicle_id.is_empty() || obs.prev_stop_id.is_empty() {
                return Err("vehicle_id/prev_stop_id");
            }
            if obs.prev_stop_id == obs.next_stop_id {
                return Err("prev_stop_id equals next_stop_id");
            }
            Ok(obs)
        })();
        let obs = match parsed {
            Ok(o) => o,
            Err(what) => {
                out.malformed += 1;
                out.warnings.push(format!("line {line}: malformed {what}; row skipped"));
                continue;
            }
        };
        if let Some(feed) = feed {
            if !feed.routes.contains_key(&obs.route_id) {
                out.unknown_route += 1;
                out.warnings.push(format!("line {line}: unknown route_id {:?}; row skipped", obs.route_id));
                continue;
            }
        }
        let key = (obs.vehicle_id.clone(), obs.prev_stop_id.clone(), obs.prev_departure);
        match latest.get(&key) {
            Some(prev) if prev.poll_time > obs.poll_time => {}
            _ => {
                latest.insert(key, obs);
            }
        }
    }
    let mut observations: Vec<_> = latest.into_values().collect();
    observations.sort_by(|a, b| {
        (a.poll_time, &a.vehicle_id, &a.prev_stop_id, a.prev_departure)
            .cmp(&(b.poll_time, &b.vehicle_id, &b.prev_stop_id, b.prev_departure))
    });
    if observations.is_empty() {
        out.warnings.push("no observations".into());
    }
    out.observations = observations;
    Ok(out)
}

/// Observed departures for one trip, keyed by stop_sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservedTripTrace {
    pub trip_id: String,
    pub observed: BTreeMap<u32, Seconds>,
}

#[derive(Debug, Clone)]
pub struct MatchOptions {
    /// Largest accepted gap between the implied and the scheduled departure.
    pub tolerance_s: u32,
    /// Rail trips carry no delay overlay unless this is set.
    pub include_rail: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions { tolerance_s: 20 * 60, include_rail: false }
    }
}

#[derive(Debug, Default)]
pub struct MatchOutcome {
    pub traces: Vec<ObservedTripTrace>,
    pub unmatched: Vec<DelayObservation>,
    /// Observations polled on another date, or on rail routes when rail is
    /// excluded.
    pub ignored: usize,
}

/// Assign each observation to the active trip on its route whose scheduled
/// departure at the previous stop is nearest the implied one. Ties go to the
/// earlier trip.
pub fn match_to_trips(
    observations: &[DelayObservation],
    feed: &TimetableFeed,
    date: NaiveDate,
    opts: &MatchOptions,
) -> MatchOutcome {
    let active = active_trips(feed, date);
    // route -> stop -> [(scheduled departure, trip id, stop_sequence)]
    type Departures<'a> = Vec<(Seconds, &'a str, u32)>;
    let mut index: HashMap<&str, HashMap<&str, Departures>> = HashMap::new();
    for trip in feed.trips.values().filter(|t| active.contains(&t.id)) {
        let by_stop = index.entry(trip.route_id.as_str()).or_default();
        for st in &trip.stop_times {
            by_stop.entry(st.stop_id.as_str()).or_default().push((st.departure, &trip.id, st.stop_sequence));
        }
    }
    let mut out = MatchOutcome::default();
    let mut traces: BTreeMap<&str, BTreeMap<u32, (NaiveDateTime, Seconds)>> = BTreeMap::new();
    for obs in observations {
        if obs.poll_time.date() != date {
            out.ignored += 1;
            continue;
        }
        let is_rail = feed.routes.get(&obs.route_id).is_some_and(|r| r.category == RouteCategory::Rail);
        if is_rail && !opts.include_rail {
            out.ignored += 1;
            continue;
        }
        let implied = obs.implied_scheduled();
        let best = index
            .get(obs.route_id.as_str())
            .and_then(|m| m.get(obs.prev_stop_id.as_str()))
            .and_then(|cands| {
                cands
                    .iter()
                    .map(|&(dep, trip, seq)| ((dep as i64 - implied).abs(), dep, trip, seq))
                    .min()
            });
        match best {
            Some((gap, _, trip, seq)) if gap <= opts.tolerance_s as i64 => {
                let slot = traces.entry(trip).or_default();
                match slot.get(&seq) {
                    Some((polled, _)) if *polled > obs.poll_time => {}
                    _ => {
                        slot.insert(seq, (obs.poll_time, obs.prev_departure));
                    }
                }
            }
            _ => out.unmatched.push(obs.clone()),
        }
    }
    out.traces = traces
        .into_iter()
        .map(|(trip, obs)| ObservedTripTrace {
            trip_id: trip.to_string(),
            observed: obs.into_iter().map(|(seq, (_, dep))| (seq, dep)).collect(),
        })
        .collect();
    out
}

/// Complete a partially observed trip.
///
/// Observed departures are kept. A missing departure is the previous stop's
/// departure plus the scheduled segment duration; if that overtakes the next
/// observed departure downstream it is set equal to it. Stops before the
/// first observation take the schedule shifted by the first observed delay,
/// never earlier than scheduled. Arrivals equal departures in the output.
///
/// `slack_s` tolerates observed departures that decrease by at most that many
/// seconds; such values are pulled down to the later observation.
pub fn impute_trace(
    scheduled: &[StopTime],
    trace: &ObservedTripTrace,
    slack_s: u32,
) -> Result<Vec<StopTime>, ImputeError> {
    if trace.observed.is_empty() {
        return Err(ImputeError::EmptyTrace);
    }
    let n = scheduled.len();
    let mut observed: Vec<Option<i64>> = vec![None; n];
    for (&seq, &dep) in &trace.observed {
        let pos = scheduled
            .iter()
            .position(|s| s.stop_sequence == seq)
            .ok_or(ImputeError::UnknownSequence(seq))?;
        observed[pos] = Some(dep as i64);
    }

    let mut last: Option<i64> = None;
    for (pos, v) in observed.iter().enumerate() {
        if let Some(v) = *v {
            if let Some(prev) = last {
                if v < prev - slack_s as i64 {
                    return Err(ImputeError::DecreasingObservations {
                        seq: scheduled[pos].stop_sequence,
                        by: prev - v,
                    });
                }
            }
            last = Some(v);
        }
    }
    // tolerated reversals: clamp to the later observation
    let mut next_obs: Option<i64> = None;
    let mut next_observed = vec![None; n];
    for pos in (0..n).rev() {
        next_observed[pos] = next_obs;
        if let Some(v) = observed[pos].as_mut() {
            if let Some(nx) = next_obs {
                *v = (*v).min(nx);
            }
            next_obs = Some(*v);
        }
    }

    let sched: Vec<i64> = scheduled.iter().map(|s| s.departure as i64).collect();
    let first = observed.iter().position(Option::is_some).expect("non-empty trace");
    let mut out = vec![0i64; n];
    out[first] = observed[first].unwrap();
    for pos in first + 1..n {
        out[pos] = match observed[pos] {
            Some(v) => v,
            None => {
                let filled = out[pos - 1] + (sched[pos] - sched[pos - 1]);
                match next_observed[pos] {
                    Some(nx) if filled > nx => nx,
                    _ => filled,
                }
            }
        };
    }
    let lead_delay = out[first] - sched[first];
    for pos in (0..first).rev() {
        let shifted = sched[pos] + lead_delay.max(0);
        out[pos] = shifted.min(out[pos + 1]);
    }

    Ok(scheduled
        .iter()
        .zip(out)
        .map(|(s, t)| {
            let t = t.max(0) as Seconds;
            StopTime { stop_id: s.stop_id.clone(), stop_sequence: s.stop_sequence, arrival: t, departure: t }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillUnobserved {
    #[default]
    Scheduled,
    RouteMedian,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesisOptions {
    pub fill_unobserved: FillUnobserved,
    pub decreasing_slack_s: u32,
}

#[derive(Debug)]
pub struct Synthesis {
    pub feed: TimetableFeed,
    pub observed_trips: usize,
    pub dropped: Vec<(String, ImputeError)>,
    /// Unobserved trips shifted by their route's median delay.
    pub filled: usize,
}

/// Build the actual-operations feed for `date`: the active trips, with
/// observed trips replaced by their imputed stop times.
pub fn synthesize_actual_feed(
    feed: &TimetableFeed,
    date: NaiveDate,
    traces: &[ObservedTripTrace],
    opts: &SynthesisOptions,
) -> Synthesis {
    let mut actual = feed.restricted_to(date);
    actual.variant = FeedVariant::Actual(date);
    let mut dropped = Vec::new();
    let mut observed_trips = 0;
    let mut route_delays: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut touched = std::collections::BTreeSet::new();
    for trace in traces {
        let Some(trip) = actual.trips.get_mut(&trace.trip_id) else {
            continue;
        };
        touched.insert(trace.trip_id.clone());
        match impute_trace(&trip.stop_times, trace, opts.decreasing_slack_s) {
            Ok(times) => {
                let mean = times
                    .iter()
                    .zip(&trip.stop_times)
                    .map(|(a, s)| a.departure as f64 - s.departure as f64)
                    .sum::<f64>()
                    / times.len() as f64;
                route_delays.entry(trip.route_id.clone()).or_default().push(mean);
                trip.stop_times = times;
                observed_trips += 1;
            }
            Err(e) => dropped.push((trace.trip_id.clone(), e)),
        }
    }
    for (id, _) in &dropped {
        actual.trips.remove(id);
    }
    let mut filled = 0;
    if opts.fill_unobserved == FillUnobserved::RouteMedian {
        let medians: BTreeMap<_, _> = route_delays
            .iter()
            .filter_map(|(r, v)| median(v).map(|m| (r.clone(), m.round() as i64)))
            .collect();
        for trip in actual.trips.values_mut().filter(|t| !touched.contains(&t.id)) {
            if let Some(&shift) = medians.get(&trip.route_id) {
                for st in &mut trip.stop_times {
                    st.arrival = (st.arrival as i64 + shift).max(0) as Seconds;
                    st.departure = (st.departure as i64 + shift).max(0) as Seconds;
                }
                filled += 1;
            }
        }
    }
    let used: std::collections::BTreeSet<String> = actual.trips.values().map(|t| t.service_id.clone()).collect();
    actual.calendars.retain(|id, _| used.contains(id));
    Synthesis { feed: actual, observed_trips, dropped, filled }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDelaySummary {
    pub route_id: String,
    pub category: RouteCategory,
    /// Per-service mean delays (seconds) grouped by day.
    pub per_day: BTreeMap<NaiveDate, Vec<f64>>,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub n_services: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DelayStats {
    pub summaries: Vec<RouteDelaySummary>,
    /// Routes with no service in any of the actual feeds.
    pub without_services: Vec<String>,
}

/// Per-route distribution of per-service mean delays across the given days.
///
/// A service is one trip on one day; its mean runs over the stops present in
/// both the scheduled and the actual trip.
pub fn delay_stats(scheduled: &TimetableFeed, actuals: &[TimetableFeed]) -> DelayStats {
    let mut per_route: BTreeMap<&str, BTreeMap<NaiveDate, Vec<f64>>> = BTreeMap::new();
    for actual in actuals {
        let date = match actual.variant {
            FeedVariant::Actual(d) => d,
            FeedVariant::Scheduled => NaiveDate::MIN,
        };
        for trip in actual.trips.values() {
            let Some(sched) = scheduled.trips.get(&trip.id) else { continue };
            let by_seq: HashMap<u32, Seconds> =
                sched.stop_times.iter().map(|s| (s.stop_sequence, s.departure)).collect();
            let diffs: Vec<f64> = trip
                .stop_times
                .iter()
                .filter_map(|s| by_seq.get(&s.stop_sequence).map(|d| s.departure as f64 - *d as f64))
                .collect();
            if diffs.is_empty() {
                continue;
            }
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            per_route.entry(sched.route_id.as_str()).or_default().entry(date).or_default().push(mean);
        }
    }
    let mut out = DelayStats::default();
    for route in scheduled.routes.values() {
        let Some(days) = per_route.remove(route.id.as_str()) else {
            out.without_services.push(route.id.clone());
            continue;
        };
        let all: Vec<f64> = days.values().flatten().copied().collect();
        out.summaries.push(RouteDelaySummary {
            route_id: route.id.clone(),
            category: route.category,
            median_s: median(&all).unwrap_or(0.0),
            min_s: all.iter().copied().fold(f64::INFINITY, f64::min),
            max_s: all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n_services: all.len(),
            per_day: days,
        });
    }
    out
}

pub fn write_delay_stats<W: std::io::Write>(stats: &DelayStats, w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["route_id", "category", "median_s", "min_s", "max_s", "n_services"])?;
    for s in &stats.summaries {
        w.write_record([
            s.route_id.clone(),
            s.category.as_str().to_string(),
            format!("{:.1}", s.median_s),
            format!("{:.1}", s.min_s),
            format!("{:.1}", s.max_s),
            s.n_services.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
