//! Minutes at which actual operations beat the timetable, classified by what
//! changed in the itinerary.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::gtfs::{format_time, Seconds, TimetableFeed};
use crate::indices::CellAccessRecord;
use crate::router::{DayTimetables, DestinationProfile, Direction, Endpoints, Itinerary, Leg, RouterConfig, Timetable, TimeWindow};
use crate::street::AccessTables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    NewTransfer,
    AlternativeRoute,
    ReducedWait,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::NewTransfer => "new_transfer",
            EventKind::AlternativeRoute => "alternative_route",
            EventKind::ReducedWait => "reduced_wait",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuckyCatchEvent {
    pub cell_id: String,
    pub school_id: String,
    pub day: NaiveDate,
    /// 1-based window index.
    pub window: usize,
    pub dep_minute: Seconds,
    pub scheduled: Itinerary,
    pub actual: Itinerary,
    pub saved_s: u32,
    pub kind: EventKind,
}

/// Scheduled (arrival, departure) by (trip, stop_sequence).
#[derive(Debug, Clone, Default)]
pub struct ScheduleLookup {
    times: HashMap<(String, u32), (Seconds, Seconds)>,
}

impl ScheduleLookup {
    pub fn new(feed: &TimetableFeed) -> Self {
        let mut times = HashMap::new();
        for t in feed.trips.values() {
            for st in &t.stop_times {
                times.insert((t.id.clone(), st.stop_sequence), (st.arrival, st.departure));
            }
        }
        ScheduleLookup { times }
    }

    pub fn get(&self, trip: &str, seq: u32) -> Option<(Seconds, Seconds)> {
        self.times.get(&(trip.to_string(), seq)).copied()
    }
}

/// True when the itinerary's transfer could not be made on the published
/// timetable: connector departs before feeder arrival + walk + slack.
pub fn connection_infeasible_on_schedule(it: &Itinerary, lookup: &ScheduleLookup, slack_s: u32) -> bool {
    let mut prev: Option<(&str, u32)> = None;
    let mut walk = 0;
    for leg in &it.legs {
        match leg {
            Leg::Ride { trip_id, board_seq, alight_seq, .. } => {
                if let Some((feeder, seq)) = prev {
                    let arr = lookup.get(feeder, seq).map(|t| t.0);
                    let dep = lookup.get(trip_id, *board_seq).map(|t| t.1);
                    if let (Some(arr), Some(dep)) = (arr, dep) {
                        if dep < arr + walk + slack_s {
                            return true;
                        }
                    }
                }
                prev = Some((trip_id, *alight_seq));
                walk = 0;
            }
            Leg::TransferWalk { duration, .. } => walk = *duration,
            _ => {}
        }
    }
    false
}

pub fn classify(scheduled: &Itinerary, actual: &Itinerary, lookup: &ScheduleLookup, slack_s: u32) -> EventKind {
    if scheduled.trip_ids() != actual.trip_ids() && connection_infeasible_on_schedule(actual, lookup, slack_s) {
        EventKind::NewTransfer
    } else if scheduled.route_ids() != actual.route_ids() {
        EventKind::AlternativeRoute
    } else {
        EventKind::ReducedWait
    }
}

/// Context shared by every OD of one day.
pub struct DetectInput<'a> {
    pub sched: &'a Timetable,
    pub actual: &'a Timetable,
    pub sched_dest: &'a DestinationProfile,
    pub actual_dest: &'a DestinationProfile,
    pub lookup: &'a ScheduleLookup,
    pub slack_s: u32,
}

/// One event per departure minute where both variants are feasible and the
/// actual door-to-door time is strictly shorter.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    input: &DetectInput<'_>,
    sched_origin: &crate::router::Origin,
    actual_origin: &crate::router::Origin,
    windows: &[TimeWindow],
    cell: &str,
    school: &str,
    day: NaiveDate,
) -> Vec<LuckyCatchEvent> {
    let mut out = Vec::new();
    for (wi, w) in windows.iter().enumerate() {
        for m in w.minutes() {
            let (Some(s), Some(a)) = (input.sched_dest.query(sched_origin, m), input.actual_dest.query(actual_origin, m)) else {
                continue;
            };
            if a.duration() >= s.duration() {
                continue;
            }
            let scheduled = input.sched_dest.itinerary(input.sched, &s);
            let actual = input.actual_dest.itinerary(input.actual, &a);
            let kind = classify(&scheduled, &actual, input.lookup, input.slack_s);
            out.push(LuckyCatchEvent {
                cell_id: cell.into(),
                school_id: school.into(),
                day,
                window: wi + 1,
                dep_minute: m,
                scheduled,
                actual,
                saved_s: s.duration() - a.duration(),
                kind,
            });
        }
    }
    out
}

/// Morning-commute events for every (cell, school) of one day, sorted by
/// (cell, school, minute).
#[allow(clippy::too_many_arguments)]
pub fn detect_day(
    sched: &DayTimetables,
    actual: &DayTimetables,
    scheduled_feed: &TimetableFeed,
    tables: &AccessTables,
    cells: &[String],
    schools: &[String],
    cfg: &RouterConfig,
    day: NaiveDate,
) -> Vec<LuckyCatchEvent> {
    let lookup = ScheduleLookup::new(scheduled_feed);
    let es = Endpoints { tables, timetable: &sched.outbound };
    let ea = Endpoints { tables, timetable: &actual.outbound };
    let dests: Vec<(DestinationProfile, DestinationProfile)> = schools
        .par_iter()
        .map(|k| {
            (
                DestinationProfile::build(&sched.outbound, &es.school_legs(k), cfg.transfer_slack_s, cfg.deadline),
                DestinationProfile::build(&actual.outbound, &ea.school_legs(k), cfg.transfer_slack_s, cfg.deadline),
            )
        })
        .collect();
    let mut events: Vec<LuckyCatchEvent> = cells
        .par_iter()
        .flat_map_iter(|cell| {
            let mut v = Vec::new();
            for (k, (ds, da)) in schools.iter().zip(&dests) {
                let input = DetectInput {
                    sched: &sched.outbound,
                    actual: &actual.outbound,
                    sched_dest: ds,
                    actual_dest: da,
                    lookup: &lookup,
                    slack_s: cfg.transfer_slack_s,
                };
                let (os, _) = es.od(cell, k, Direction::Outbound);
                let (oa, _) = ea.od(cell, k, Direction::Outbound);
                v.extend(detect(&input, &os, &oa, &cfg.morning, cell, k, day));
            }
            v
        })
        .collect();
    events.sort_by(|a, b| (&a.cell_id, &a.school_id, a.day, a.dep_minute).cmp(&(&b.cell_id, &b.school_id, b.day, b.dep_minute)));
    events
}

pub fn write_events_csv<W: Write>(events: &[LuckyCatchEvent], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["cell_id", "school_id", "day", "window", "dep_minute", "kind", "saved_s", "sched_legs", "actual_legs"])?;
    for e in events {
        w.write_record([
            e.cell_id.as_str(),
            &e.school_id,
            &e.day.to_string(),
            &e.window.to_string(),
            &format_time(e.dep_minute),
            e.kind.as_str(),
            &e.saved_s.to_string(),
            &e.scheduled.to_string(),
            &e.actual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictLuckySummary {
    pub district: String,
    pub threshold_min: u32,
    pub counts: BTreeMap<EventKind, usize>,
    /// Cells whose median-over-days OGL is positive.
    pub cells_positive_ogl: usize,
    /// Largest positive median OGL in the district, if any.
    pub max_ogl: Option<f64>,
}

/// Per-district view of events; districts without events are omitted.
/// `events` yields `(cell_id, kind)` pairs.
pub fn summarize<'a>(
    events: impl IntoIterator<Item = (&'a str, EventKind)>,
    records: &[CellAccessRecord],
    threshold_min: u32,
) -> Vec<DistrictLuckySummary> {
    let district_of: HashMap<&str, &str> = records.iter().map(|r| (r.cell_id.as_str(), r.district.as_str())).collect();
    let mut rows: BTreeMap<&str, DistrictLuckySummary> = BTreeMap::new();
    for (cell, kind) in events {
        let d = district_of.get(cell).copied().unwrap_or("");
        let row = rows.entry(d).or_insert_with(|| DistrictLuckySummary {
            district: d.to_string(),
            threshold_min,
            counts: BTreeMap::new(),
            cells_positive_ogl: 0,
            max_ogl: None,
        });
        *row.counts.entry(kind).or_default() += 1;
    }
    for r in records {
        let Some(row) = rows.get_mut(r.district.as_str()) else { continue };
        let Some(m) = r.medians.get(&threshold_min) else { continue };
        if m.ogl > 0.0 {
            row.cells_positive_ogl += 1;
            row.max_ogl = Some(row.max_ogl.map_or(m.ogl, |x: f64| x.max(m.ogl)));
        }
    }
    rows.into_values().collect()
}

pub fn write_summary_csv<W: Write>(rows: &[DistrictLuckySummary], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["district", "threshold_min", "new_transfer", "alternative_route", "reduced_wait", "cells_positive_ogl", "max_ogl"])?;
    for r in rows {
        let c = |k| r.counts.get(&k).copied().unwrap_or(0).to_string();
        w.write_record([
            r.district.clone(),
            r.threshold_min.to_string(),
            c(EventKind::NewTransfer),
            c(EventKind::AlternativeRoute),
            c(EventKind::ReducedWait),
            r.cells_positive_ogl.to_string(),
            r.max_ogl.map_or_else(|| "NA".into(), |x| x.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
