//! GTFS-style timetable model: stops, routes, trips, stop times and service
//! calendars, with per-date service resolution.

mod parse;
mod write;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub use parse::parse_feed;
pub use write::write_feed;

/// Seconds since service-day midnight. Values past 24:00:00 are kept as-is.
pub type Seconds = u32;

#[derive(Debug, thiserror::Error)]
pub enum GtfsError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {field}: {message}")]
    Field {
        file: String,
        line: u64,
        field: String,
        message: String,
    },
    #[error("{file}:{line}: non-monotone stop_times in trip {trip_id}")]
    NonMonotone {
        file: String,
        line: u64,
        trip_id: String,
    },
    #[error("frequencies.txt is not supported: feeds must list every trip explicitly")]
    FrequenciesUnsupported,
    #[error("feed is invalid: {0}")]
    Invalid(String),
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    BusStop,
    RailStation,
}

impl StopKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StopKind::BusStop => "bus_stop",
            StopKind::RailStation => "rail_station",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "bus_stop" | "bus" => Some(StopKind::BusStop),
            "rail_station" | "rail" | "station" => Some(StopKind::RailStation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteCategory {
    Regular,
    Local,
    Rail,
}

impl RouteCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteCategory::Regular => "regular",
            RouteCategory::Local => "local",
            RouteCategory::Rail => "rail",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "regular" => Some(RouteCategory::Regular),
            "local" => Some(RouteCategory::Local),
            "rail" => Some(RouteCategory::Rail),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub kind: StopKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub id: String,
    pub name: String,
    pub category: RouteCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopTime {
    pub stop_id: String,
    pub stop_sequence: u32,
    pub arrival: Seconds,
    pub departure: Seconds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub id: String,
    pub route_id: String,
    pub service_id: String,
    /// Ordered by `stop_sequence`.
    pub stop_times: Vec<StopTime>,
}

impl Trip {
    /// Departure at the first stop to arrival at the last.
    pub fn duration(&self) -> Option<Seconds> {
        let first = self.stop_times.first()?;
        let last = self.stop_times.last()?;
        last.arrival.checked_sub(first.departure)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceCalendar {
    pub service_id: String,
    /// Monday first.
    pub weekdays: [bool; 7],
    /// Date range covered by the weekday mask, inclusive. `None` when the
    /// service is defined only through calendar_dates.txt.
    pub range: Option<(NaiveDate, NaiveDate)>,
    pub added: BTreeSet<NaiveDate>,
    pub removed: BTreeSet<NaiveDate>,
}

impl ServiceCalendar {
    pub fn runs_on(&self, date: NaiveDate) -> bool {
        if self.removed.contains(&date) {
            return false;
        }
        if self.added.contains(&date) {
            return true;
        }
        match self.range {
            Some((start, end)) if start <= date && date <= end => {
                self.weekdays[date.weekday().num_days_from_monday() as usize]
            }
            _ => false,
        }
    }

    fn covers(&self, date: NaiveDate) -> bool {
        self.added.contains(&date)
            || self.removed.contains(&date)
            || self.range.is_some_and(|(s, e)| s <= date && date <= e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeedVariant {
    Scheduled,
    Actual(NaiveDate),
}

impl fmt::Display for FeedVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedVariant::Scheduled => f.write_str("scheduled"),
            FeedVariant::Actual(d) => write!(f, "actual({d})"),
        }
    }
}

/// One network variant. Immutable once built; maps are keyed by id so
/// iteration order is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct TimetableFeed {
    pub variant: FeedVariant,
    pub stops: BTreeMap<String, Stop>,
    pub routes: BTreeMap<String, Route>,
    pub trips: BTreeMap<String, Trip>,
    pub calendars: BTreeMap<String, ServiceCalendar>,
    /// Non-fatal notes collected while loading (defaulted columns and the like).
    pub warnings: Vec<String>,
}

impl TimetableFeed {
    pub fn empty(variant: FeedVariant) -> Self {
        TimetableFeed {
            variant,
            stops: BTreeMap::new(),
            routes: BTreeMap::new(),
            trips: BTreeMap::new(),
            calendars: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn route_of(&self, trip: &Trip) -> Option<&Route> {
        self.routes.get(&trip.route_id)
    }

    /// Copy of this feed holding only the trips active on `date` (and the
    /// calendars they reference).
    pub fn restricted_to(&self, date: NaiveDate) -> TimetableFeed {
        let active = active_trips(self, date);
        let trips: BTreeMap<_, _> = self
            .trips
            .iter()
            .filter(|(id, _)| active.contains(*id))
            .map(|(id, t)| (id.clone(), t.clone()))
            .collect();
        let services: BTreeSet<&str> = trips.values().map(|t| t.service_id.as_str()).collect();
        let calendars = self
            .calendars
            .iter()
            .filter(|(id, _)| services.contains(id.as_str()))
            .map(|(id, c)| (id.clone(), c.clone()))
            .collect();
        TimetableFeed {
            variant: self.variant,
            stops: self.stops.clone(),
            routes: self.routes.clone(),
            trips,
            calendars,
            warnings: Vec::new(),
        }
    }
}

/// Trips whose service calendar (weekday mask plus exceptions) covers `date`.
pub fn active_trips(feed: &TimetableFeed, date: NaiveDate) -> BTreeSet<String> {
    if !feed.calendars.is_empty() && !feed.calendars.values().any(|c| c.covers(date)) {
        log::warn!("date {date} lies outside every service calendar range");
        return BTreeSet::new();
    }
    let running: BTreeSet<&str> = feed
        .calendars
        .values()
        .filter(|c| c.runs_on(date))
        .map(|c| c.service_id.as_str())
        .collect();
    feed.trips
        .values()
        .filter(|t| running.contains(t.service_id.as_str()))
        .map(|t| t.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    UnresolvedStopId,
    UnresolvedRouteId,
    UnresolvedServiceId,
    TooFewStopTimes,
    NonIncreasingSequence,
    DepartureBeforeArrival,
    NonMonotoneStopTimes,
    CoordinateOutOfRange,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::UnresolvedStopId => "unresolved stop_id",
            Rule::UnresolvedRouteId => "unresolved route_id",
            Rule::UnresolvedServiceId => "unresolved service_id",
            Rule::TooFewStopTimes => "fewer than 2 stop_times",
            Rule::NonIncreasingSequence => "stop_sequence not strictly increasing",
            Rule::DepartureBeforeArrival => "departure_time before arrival_time",
            Rule::NonMonotoneStopTimes => "non-monotone stop_times",
            Rule::CoordinateOutOfRange => "coordinate out of range",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// e.g. `trip T1` or `stop S3`.
    pub entity: String,
    pub rule: Rule,
    /// Index into the trip's stop-time list, when the rule concerns one.
    pub position: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule.as_str())
    }
}

/// Check every model invariant. Violations are data; an empty list means the
/// feed is valid.
pub fn validate_feed(feed: &TimetableFeed) -> Vec<Violation> {
    let mut out = Vec::new();
    for stop in feed.stops.values() {
        if !(-90.0..=90.0).contains(&stop.lat) || !(-180.0..=180.0).contains(&stop.lon) {
            out.push(Violation {
                entity: format!("stop {}", stop.id),
                rule: Rule::CoordinateOutOfRange,
                position: None,
            });
        }
    }
    for trip in feed.trips.values() {
        let entity = || format!("trip {}", trip.id);
        if !feed.routes.contains_key(&trip.route_id) {
            out.push(Violation { entity: entity(), rule: Rule::UnresolvedRouteId, position: None });
        }
        if !feed.calendars.contains_key(&trip.service_id) {
            out.push(Violation { entity: entity(), rule: Rule::UnresolvedServiceId, position: None });
        }
        if trip.stop_times.len() < 2 {
            out.push(Violation { entity: entity(), rule: Rule::TooFewStopTimes, position: None });
        }
        for (i, st) in trip.stop_times.iter().enumerate() {
            if !feed.stops.contains_key(&st.stop_id) {
                out.push(Violation { entity: entity(), rule: Rule::UnresolvedStopId, position: Some(i) });
            }
            if st.departure < st.arrival {
                out.push(Violation {
                    entity: entity(),
                    rule: Rule::DepartureBeforeArrival,
                    position: Some(i),
                });
            }
            if i > 0 {
                let prev = &trip.stop_times[i - 1];
                if st.stop_sequence <= prev.stop_sequence {
                    out.push(Violation {
                        entity: entity(),
                        rule: Rule::NonIncreasingSequence,
                        position: Some(i),
                    });
                }
                if st.arrival < prev.departure {
                    out.push(Violation {
                        entity: entity(),
                        rule: Rule::NonMonotoneStopTimes,
                        position: Some(i),
                    });
                }
            }
        }
    }
    out
}

/// Parse `H:MM:SS` (hours may exceed 23) into seconds.
pub fn parse_time(s: &str) -> Option<Seconds> {
    let mut parts = s.trim().split(':');
    let h: u32 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let sec: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 {
        return None;
    }
    h.checked_mul(3600)?.checked_add(m * 60 + sec)
}

pub fn format_time(t: Seconds) -> String {
    format!("{:02}:{:02}:{:02}", t / 3600, (t / 60) % 60, t % 60)
}

pub(crate) fn parse_gtfs_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y%m%d").ok()
}

pub(crate) fn format_gtfs_date(d: NaiveDate) -> String {
    d.format("%Y%m%d").to_string()
}
