//! Door-to-door transit routing with at most one transfer.
//!
//! For each destination a backward profile is built once: level 1 holds, per
//! boarding stop and departure, the best arrival reachable with one ride;
//! level 2 the best with two rides. Answering a departure minute is then a
//! binary search per access leg.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gtfs::{format_time, parse_time, Seconds, StopKind, TimetableFeed};
use crate::stats::nearest_rank;
use crate::street::{AccessTable, AccessTables, Mode};

pub const INFEASIBLE: &str = "INF";
pub const UNREACHABLE: &str = "UNREACH";

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("window shares sum to {0}, expected 1")]
    SharesSum(f64),
    #[error("window {start}-{end} must span 1800 s")]
    WindowLength { start: Seconds, end: Seconds },
    #[error("window share {0} is negative")]
    NegativeShare(f64),
    #[error("no windows configured for {0}")]
    NoWindows(&'static str),
    #[error("matrix line {line}: {message}")]
    MatrixRow { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const WINDOW_SECONDS: Seconds = 1800;

/// Morning departure shares by half hour from 06:00.
pub const MORNING_SHARES: [f64; 5] = [0.041, 0.041, 0.396, 0.396, 0.126];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Seconds,
    pub end: Seconds,
    pub share: f64,
}

impl TimeWindow {
    /// Departure minutes `start, start+60, …, end-60`.
    pub fn minutes(&self) -> impl Iterator<Item = Seconds> + '_ {
        (self.start..self.end).step_by(60)
    }
}

/// Consecutive 30-minute windows starting at `start`, one per share.
pub fn consecutive_windows(start: Seconds, shares: &[f64]) -> Vec<TimeWindow> {
    shares
        .iter()
        .enumerate()
        .map(|(i, &share)| {
            let s = start + i as Seconds * WINDOW_SECONDS;
            TimeWindow { start: s, end: s + WINDOW_SECONDS, share }
        })
        .collect()
}

pub fn validate_windows(windows: &[TimeWindow], label: &'static str) -> Result<(), RouterError> {
    if windows.is_empty() {
        return Err(RouterError::NoWindows(label));
    }
    for w in windows {
        if w.end.checked_sub(w.start) != Some(WINDOW_SECONDS) {
            return Err(RouterError::WindowLength { start: w.start, end: w.end });
        }
        if w.share < 0.0 || !w.share.is_finite() {
            return Err(RouterError::NegativeShare(w.share));
        }
    }
    let sum: f64 = windows.iter().map(|w| w.share).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(RouterError::SharesSum(sum));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Percentile {
    #[default]
    P25,
    P50,
}

impl Percentile {
    /// As a fraction `(num, den)`.
    pub fn fraction(self) -> (usize, usize) {
        match self {
            Percentile::P25 => (1, 4),
            Percentile::P50 => (1, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Percentile::P25 => "p25",
            Percentile::P50 => "p50",
        }
    }
}

impl FromStr for Percentile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "p25" => Ok(Percentile::P25),
            "p50" => Ok(Percentile::P50),
            other => Err(format!("unknown percentile {other:?} (expected p25 or p50)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub morning: Vec<TimeWindow>,
    pub evening: Vec<TimeWindow>,
    pub percentile: Percentile,
    /// Latest outbound arrival. Evening trips have no deadline.
    pub deadline: Option<Seconds>,
    pub transfer_slack_s: u32,
    pub strict_window_exclusion: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            morning: consecutive_windows(6 * 3600, &MORNING_SHARES),
            evening: consecutive_windows(16 * 3600, &[0.125; 8]),
            percentile: Percentile::P25,
            deadline: Some(8 * 3600 + 40 * 60),
            transfer_slack_s: 60,
            strict_window_exclusion: false,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        validate_windows(&self.morning, "morning")?;
        validate_windows(&self.evening, "evening")
    }
}

/// One compiled trip: parallel arrays over its stop sequence.
#[derive(Debug, Clone)]
pub struct TripTimes {
    pub id: String,
    pub route_id: String,
    pub stops: Vec<u32>,
    pub seqs: Vec<u32>,
    pub arr: Vec<Seconds>,
    pub dep: Vec<Seconds>,
}

/// Index-based view of a feed restricted to one service day and a range of
/// boarding times.
#[derive(Debug, Clone)]
pub struct Timetable {
    stop_ids: Vec<String>,
    stop_kinds: Vec<StopKind>,
    stop_index: HashMap<String, u32>,
    trips: Vec<TripTimes>,
    /// Per stop: (target, walk seconds), the stop itself first at 0 s.
    transfers: Vec<Vec<(u32, u32)>>,
}

impl Timetable {
    /// Compile `feed` (already resolved to one day). Trips are kept only if
    /// they can be boarded somewhere in `[board_from, board_until]`.
    pub fn compile(feed: &TimetableFeed, transfers: &AccessTable, board_from: Seconds, board_until: Seconds) -> Self {
        let stop_ids: Vec<String> = feed.stops.keys().cloned().collect();
        let stop_kinds = feed.stops.values().map(|s| s.kind).collect();
        let stop_index: HashMap<String, u32> = stop_ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        let mut trips = Vec::new();
        for t in feed.trips.values() {
            let n = t.stop_times.len();
            if n < 2 {
                continue;
            }
            let boardable = t.stop_times[..n - 1].iter().any(|st| st.departure >= board_from && st.departure <= board_until);
            if !boardable {
                continue;
            }
            let Some(stops) = t.stop_times.iter().map(|st| stop_index.get(&st.stop_id).copied()).collect::<Option<Vec<_>>>() else {
                log::warn!("trip {} references unknown stops; skipped", t.id);
                continue;
            };
            trips.push(TripTimes {
                id: t.id.clone(),
                route_id: t.route_id.clone(),
                stops,
                seqs: t.stop_times.iter().map(|st| st.stop_sequence).collect(),
                arr: t.stop_times.iter().map(|st| st.arrival).collect(),
                dep: t.stop_times.iter().map(|st| st.departure).collect(),
            });
        }
        let mut tr: Vec<Vec<(u32, u32)>> = (0..stop_ids.len()).map(|i| vec![(i as u32, 0)]).collect();
        for ((a, b), &secs) in &transfers.entries {
            if let (Some(&ia), Some(&ib)) = (stop_index.get(a), stop_index.get(b)) {
                if ia != ib {
                    tr[ia as usize].push((ib, secs));
                    tr[ib as usize].push((ia, secs));
                }
            }
        }
        for list in &mut tr {
            let own = list[0];
            let mut rest: Vec<_> = list[1..].to_vec();
            rest.sort_unstable();
            rest.dedup_by_key(|x| x.0);
            list.clear();
            list.push(own);
            list.extend(rest);
        }
        Timetable { stop_ids, stop_kinds, stop_index, trips, transfers: tr }
    }

    pub fn stop_index(&self, id: &str) -> Option<u32> {
        self.stop_index.get(id).copied()
    }

    pub fn stop_id(&self, idx: u32) -> &str {
        &self.stop_ids[idx as usize]
    }

    pub fn stop_kind(&self, idx: u32) -> StopKind {
        self.stop_kinds[idx as usize]
    }

    pub fn trips(&self) -> &[TripTimes] {
        &self.trips
    }

    pub fn stop_count(&self) -> usize {
        self.stop_ids.len()
    }

    /// Walking transfers out of `stop`, itself included at 0 s.
    pub fn transfers_from(&self, stop: u32) -> &[(u32, u32)] {
        &self.transfers[stop as usize]
    }
}

/// Access or egress between an endpoint and a boarding stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccessLeg {
    pub stop: u32,
    pub mode: Mode,
    pub secs: u32,
}

/// Origin side of a query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Origin {
    pub legs: Vec<AccessLeg>,
    /// Direct walk to the destination, already within the walk-only cap.
    pub walk_only: Option<u32>,
}

impl Origin {
    pub fn new(mut legs: Vec<AccessLeg>, walk_only: Option<u32>) -> Self {
        legs.sort_by_key(|l| (l.stop, l.mode, l.secs));
        legs.dedup_by_key(|l| (l.stop, l.mode));
        Origin { legs, walk_only }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    dep: Seconds,
    value: Seconds,
    trip: u32,
    board: u32,
    alight: u32,
    /// Level 2 only: transfer target stop, walk seconds and level-1 entry.
    via_stop: u32,
    via_walk: u32,
    via_entry: u32,
}

#[derive(Debug, Clone, Default)]
struct Level {
    entries: Vec<Vec<Entry>>,
    best: Vec<Vec<u32>>,
}

impl Level {
    fn finish(mut entries: Vec<Vec<Entry>>) -> Self {
        let mut best = Vec::with_capacity(entries.len());
        for list in &mut entries {
            list.sort_unstable_by_key(|e| (e.dep, e.value, e.trip, e.board));
            let mut b = vec![0u32; list.len()];
            for k in (0..list.len()).rev() {
                b[k] = if k + 1 < list.len() && list[b[k + 1] as usize].value < list[k].value {
                    b[k + 1]
                } else {
                    k as u32
                };
            }
            best.push(b);
        }
        Level { entries, best }
    }

    fn query(&self, stop: u32, ready: Seconds) -> Option<(u32, &Entry)> {
        let list = &self.entries[stop as usize];
        let k = list.partition_point(|e| e.dep < ready);
        if k == list.len() {
            return None;
        }
        let b = self.best[stop as usize][k];
        Some((b, &list[b as usize]))
    }

    fn entry(&self, stop: u32, idx: u32) -> &Entry {
        &self.entries[stop as usize][idx as usize]
    }
}

/// Backward profile towards one destination.
#[derive(Debug, Clone)]
pub struct DestinationProfile {
    l1: Level,
    l2: Level,
    egress: Vec<Option<(u32, Mode)>>,
    deadline: Option<Seconds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Via {
    WalkOnly,
    Transit { leg: AccessLeg, rides: u8, entry: u32 },
}

/// Best option found for one departure minute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub departure: Seconds,
    pub arrival: Seconds,
    pub via: Via,
}

impl Choice {
    pub fn duration(&self) -> u32 {
        self.arrival - self.departure
    }

    pub fn rides(&self) -> u8 {
        match self.via {
            Via::WalkOnly => 0,
            Via::Transit { rides, .. } => rides,
        }
    }

    /// Station at which a bicycle was left, if cycled to.
    pub fn cycle_station(&self) -> Option<u32> {
        match self.via {
            Via::Transit { leg, .. } if leg.mode == Mode::Cycle => Some(leg.stop),
            _ => None,
        }
    }

    /// Ordering among equal-arrival options: walking before cycling, then
    /// fewer rides, then lower access stop index.
    fn key(&self) -> (Seconds, u8, u8, u32) {
        match self.via {
            Via::WalkOnly => (self.arrival, 0, 0, 0),
            Via::Transit { leg, rides, .. } => (self.arrival, (leg.mode == Mode::Cycle) as u8, rides, leg.stop),
        }
    }
}

impl DestinationProfile {
    pub fn build(tt: &Timetable, egress: &[AccessLeg], transfer_slack_s: u32, deadline: Option<Seconds>) -> Self {
        let n = tt.stop_count();
        let mut egress_at: Vec<Option<(u32, Mode)>> = vec![None; n];
        for leg in egress {
            let slot = &mut egress_at[leg.stop as usize];
            if slot.is_none_or(|(s, m)| (leg.secs, leg.mode) < (s, m)) {
                *slot = Some((leg.secs, leg.mode));
            }
        }
        let within = |v: Seconds| deadline.is_none_or(|d| v <= d);

        let mut l1: Vec<Vec<Entry>> = vec![Vec::new(); n];
        for (ti, t) in tt.trips.iter().enumerate() {
            let mut best: Option<(Seconds, u32)> = None;
            for j in (0..t.stops.len()).rev() {
                if let Some((value, alight)) = best {
                    l1[t.stops[j] as usize].push(Entry {
                        dep: t.dep[j],
                        value,
                        trip: ti as u32,
                        board: j as u32,
                        alight,
                        via_stop: u32::MAX,
                        via_walk: 0,
                        via_entry: u32::MAX,
                    });
                }
                if let Some((e, _)) = egress_at[t.stops[j] as usize] {
                    let v = t.arr[j] + e;
                    if within(v) && best.is_none_or(|(b, _)| v <= b) {
                        best = Some((v, j as u32));
                    }
                }
            }
        }
        let l1 = Level::finish(l1);

        let useful: Vec<bool> = (0..n)
            .map(|s| tt.transfers[s].iter().any(|&(to, _)| !l1.entries[to as usize].is_empty()))
            .collect();
        let mut l2: Vec<Vec<Entry>> = vec![Vec::new(); n];
        for (ti, t) in tt.trips.iter().enumerate() {
            // (value, alight, via_stop, via_walk, via_entry)
            let mut best: Option<(Seconds, u32, u32, u32, u32)> = None;
            for j in (0..t.stops.len()).rev() {
                if let Some((value, alight, via_stop, via_walk, via_entry)) = best {
                    l2[t.stops[j] as usize].push(Entry {
                        dep: t.dep[j],
                        value,
                        trip: ti as u32,
                        board: j as u32,
                        alight,
                        via_stop,
                        via_walk,
                        via_entry,
                    });
                }
                let here = t.stops[j];
                if !useful[here as usize] {
                    continue;
                }
                let mut local: Option<(Seconds, u32, u32, u32, u32)> = None;
                for &(to, walk) in &tt.transfers[here as usize] {
                    let ready = t.arr[j] + walk + transfer_slack_s;
                    if let Some((idx, e)) = l1.query(to, ready) {
                        if local.is_none_or(|l| e.value < l.0) {
                            local = Some((e.value, j as u32, to, walk, idx));
                        }
                    }
                }
                if let Some(l) = local {
                    if best.is_none_or(|b| l.0 <= b.0) {
                        best = Some(l);
                    }
                }
            }
        }
        DestinationProfile { l1, l2: Level::finish(l2), egress: egress_at, deadline }
    }

    /// Best option leaving the origin at `departure`, or `None`.
    pub fn query(&self, origin: &Origin, departure: Seconds) -> Option<Choice> {
        let mut best: Option<Choice> = None;
        let mut offer = |c: Choice| {
            if best.is_none_or(|b| c.key() < b.key()) {
                best = Some(c);
            }
        };
        if let Some(w) = origin.walk_only {
            let arrival = departure + w;
            if self.deadline.is_none_or(|d| arrival <= d) {
                offer(Choice { departure, arrival, via: Via::WalkOnly });
            }
        }
        for &leg in &origin.legs {
            let ready = departure + leg.secs;
            for (level, rides) in [(&self.l1, 1u8), (&self.l2, 2u8)] {
                if let Some((entry, e)) = level.query(leg.stop, ready) {
                    offer(Choice { departure, arrival: e.value, via: Via::Transit { leg, rides, entry } });
                }
            }
        }
        best
    }

    /// Expand a choice into its legs.
    pub fn itinerary(&self, tt: &Timetable, choice: &Choice) -> Itinerary {
        let mut legs = Vec::new();
        match choice.via {
            Via::WalkOnly => legs.push(Leg::WalkOnly { duration: choice.duration() }),
            Via::Transit { leg, rides, entry } => {
                legs.push(Leg::Access { mode: leg.mode, stop: tt.stop_id(leg.stop).to_string(), duration: leg.secs });
                let level = if rides == 1 { &self.l1 } else { &self.l2 };
                let e = *level.entry(leg.stop, entry);
                let last = if rides == 1 {
                    legs.push(ride_leg(tt, e.trip, e.board, e.alight));
                    e
                } else {
                    legs.push(ride_leg(tt, e.trip, e.board, e.alight));
                    let from = tt.trips[e.trip as usize].stops[e.alight as usize];
                    legs.push(Leg::TransferWalk {
                        from_stop: tt.stop_id(from).to_string(),
                        to_stop: tt.stop_id(e.via_stop).to_string(),
                        duration: e.via_walk,
                    });
                    let e1 = *self.l1.entry(e.via_stop, e.via_entry);
                    legs.push(ride_leg(tt, e1.trip, e1.board, e1.alight));
                    e1
                };
                let t = &tt.trips[last.trip as usize];
                let alight_stop = t.stops[last.alight as usize];
                let (secs, mode) = self.egress[alight_stop as usize].expect("egress exists for alight stop");
                legs.push(Leg::Egress { mode, stop: tt.stop_id(alight_stop).to_string(), duration: secs });
            }
        }
        let it = Itinerary { departure: choice.departure, arrival: choice.arrival, legs };
        debug_assert!(it.rides() <= 2);
        it
    }
}

fn ride_leg(tt: &Timetable, trip: u32, board: u32, alight: u32) -> Leg {
    let t = &tt.trips[trip as usize];
    let (b, a) = (board as usize, alight as usize);
    Leg::Ride {
        trip_id: t.id.clone(),
        route_id: t.route_id.clone(),
        board_stop: tt.stop_id(t.stops[b]).to_string(),
        alight_stop: tt.stop_id(t.stops[a]).to_string(),
        board_seq: t.seqs[b],
        alight_seq: t.seqs[a],
        board_time: t.dep[b],
        alight_time: t.arr[a],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Leg {
    Access { mode: Mode, stop: String, duration: u32 },
    Ride {
        trip_id: String,
        route_id: String,
        board_stop: String,
        alight_stop: String,
        board_seq: u32,
        alight_seq: u32,
        board_time: Seconds,
        alight_time: Seconds,
    },
    TransferWalk { from_stop: String, to_stop: String, duration: u32 },
    Egress { mode: Mode, stop: String, duration: u32 },
    WalkOnly { duration: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Itinerary {
    pub departure: Seconds,
    pub arrival: Seconds,
    pub legs: Vec<Leg>,
}

impl Itinerary {
    pub fn rides(&self) -> usize {
        self.legs.iter().filter(|l| matches!(l, Leg::Ride { .. })).count()
    }

    pub fn trip_ids(&self) -> Vec<&str> {
        self.legs
            .iter()
            .filter_map(|l| match l {
                Leg::Ride { trip_id, .. } => Some(trip_id.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn route_ids(&self) -> BTreeSet<&str> {
        self.legs
            .iter()
            .filter_map(|l| match l {
                Leg::Ride { route_id, .. } => Some(route_id.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Leg start times, walking the legs forward from the departure.
    pub fn leg_times(&self) -> Vec<(Seconds, Seconds)> {
        let mut t = self.departure;
        let mut out = Vec::with_capacity(self.legs.len());
        for leg in &self.legs {
            let (s, e) = match leg {
                Leg::Access { duration, .. } | Leg::TransferWalk { duration, .. } | Leg::Egress { duration, .. } | Leg::WalkOnly { duration } => {
                    (t, t + duration)
                }
                Leg::Ride { board_time, alight_time, .. } => (*board_time, *alight_time),
            };
            out.push((s, e));
            t = e;
        }
        out
    }
}

impl fmt::Display for Itinerary {
    /// `mode:stop→stop@time` per leg, joined by `|`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let times = self.leg_times();
        for (i, (leg, (start, _))) in self.legs.iter().zip(times).enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            let at = format_time(start);
            match leg {
                Leg::Access { mode, stop, .. } => write!(f, "{}:origin→{stop}@{at}", mode.as_str())?,
                Leg::Ride { trip_id, board_stop, alight_stop, .. } => write!(f, "ride[{trip_id}]:{board_stop}→{alight_stop}@{at}")?,
                Leg::TransferWalk { from_stop, to_stop, .. } => write!(f, "walk:{from_stop}→{to_stop}@{at}")?,
                Leg::Egress { mode, stop, .. } => write!(f, "{}:{stop}→destination@{at}", mode.as_str())?,
                Leg::WalkOnly { .. } => write!(f, "walk:origin→destination@{at}")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeProfile {
    pub window: TimeWindow,
    pub minutes: Vec<Seconds>,
    pub choices: Vec<Option<Choice>>,
}

impl TravelTimeProfile {
    pub fn durations(&self) -> Vec<Option<u32>> {
        self.choices.iter().map(|c| c.map(|c| c.duration())).collect()
    }

    pub fn at(&self, minute: Seconds) -> Option<&Choice> {
        let i = self.minutes.iter().position(|&m| m == minute)?;
        self.choices[i].as_ref()
    }
}

pub fn profile(dest: &DestinationProfile, origin: &Origin, window: &TimeWindow) -> TravelTimeProfile {
    let minutes: Vec<Seconds> = window.minutes().collect();
    let choices = minutes.iter().map(|&m| dest.query(origin, m)).collect();
    TravelTimeProfile { window: *window, minutes, choices }
}

/// Nearest-rank percentile over the finite entries, with the earliest minute
/// attaining it.
pub fn representative(minutes: &[Seconds], durations: &[Option<u32>], p: Percentile) -> Option<(u32, Seconds)> {
    let mut finite: Vec<u32> = durations.iter().flatten().copied().collect();
    if finite.is_empty() {
        return None;
    }
    finite.sort_unstable();
    let (num, den) = p.fraction();
    let value = finite[nearest_rank(finite.len(), num, den) - 1];
    let i = durations.iter().position(|d| *d == Some(value))?;
    Some((value, minutes[i]))
}

/// Actual-operations duration at the scheduled representative minute.
pub fn condition_on_actual(minute: Seconds, actual: &TravelTimeProfile) -> Option<u32> {
    actual.at(minute).map(|c| c.duration())
}

/// Share-weighted round trip over per-window durations. Shares are renormalised over feasible
/// windows per direction unless `strict`, in which case any infeasible window
/// makes the pair unreachable.
pub fn round_trip(outbound: &[(Option<u32>, f64)], ret: &[(Option<u32>, f64)], strict: bool) -> Option<f64> {
    let direction = |ws: &[(Option<u32>, f64)]| -> Option<f64> {
        if strict && ws.iter().any(|(d, _)| d.is_none()) {
            return None;
        }
        let feasible: f64 = ws.iter().filter(|(d, _)| d.is_some()).map(|(_, s)| s).sum();
        if feasible <= 0.0 {
            return None;
        }
        let total: f64 = ws.iter().map(|(_, s)| s).sum();
        let dot: f64 = ws.iter().filter_map(|(d, s)| d.map(|d| d as f64 * s)).sum();
        // exact weights when nothing is dropped
        Some(if feasible == total { dot } else { dot / feasible })
    };
    Some(direction(outbound)? + direction(ret)?)
}

/// Which return itineraries are admissible given the outbound access mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReturnConstraint {
    /// Walk egress only (the bicycle stayed at home).
    NoBike,
    /// Cycle egress from this station only.
    BikeAt(u32),
}

impl ReturnConstraint {
    pub fn from_choice(choice: Option<&Choice>) -> Self {
        choice.and_then(Choice::cycle_station).map_or(ReturnConstraint::NoBike, ReturnConstraint::BikeAt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Outbound,
    Return(ReturnConstraint),
}

/// Resolves access/egress legs of cells and schools against one timetable.
pub struct Endpoints<'a> {
    pub tables: &'a AccessTables,
    pub timetable: &'a Timetable,
}

impl Endpoints<'_> {
    fn legs(&self, table: &AccessTable, mode: Mode, site: &str) -> Vec<AccessLeg> {
        table
            .from_site(site)
            .filter_map(|(to, secs)| self.timetable.stop_index(to).map(|stop| AccessLeg { stop, mode, secs }))
            .collect()
    }

    /// Walk and cycle legs from a cell.
    pub fn cell_access(&self, cell: &str) -> Vec<AccessLeg> {
        let mut v = self.legs(&self.tables.walk, Mode::Walk, cell);
        v.extend(self.legs(&self.tables.cycle, Mode::Cycle, cell));
        v
    }

    pub fn cell_egress(&self, cell: &str, c: ReturnConstraint) -> Vec<AccessLeg> {
        match c {
            ReturnConstraint::NoBike => self.legs(&self.tables.walk, Mode::Walk, cell),
            ReturnConstraint::BikeAt(s) => self
                .tables
                .cycle
                .get(cell, self.timetable.stop_id(s))
                .map(|secs| AccessLeg { stop: s, mode: Mode::Cycle, secs })
                .into_iter()
                .collect(),
        }
    }

    pub fn school_legs(&self, school: &str) -> Vec<AccessLeg> {
        self.legs(&self.tables.walk, Mode::Walk, school)
    }

    pub fn walk_only(&self, cell: &str, school: &str) -> Option<u32> {
        self.tables.walk.get(cell, school)
    }

    /// Origin and egress legs for one OD in `direction`.
    pub fn od(&self, cell: &str, school: &str, direction: Direction) -> (Origin, Vec<AccessLeg>) {
        match direction {
            Direction::Outbound => (Origin::new(self.cell_access(cell), self.walk_only(cell, school)), self.school_legs(school)),
            Direction::Return(c) => {
                let walk = if c == ReturnConstraint::NoBike { self.walk_only(cell, school) } else { None };
                (Origin::new(self.school_legs(school), walk), self.cell_egress(cell, c))
            }
        }
    }
}

/// The pair of timetables one service day needs: morning boardings up to the
/// deadline, and evening boardings.
#[derive(Debug, Clone)]
pub struct DayTimetables {
    pub outbound: Timetable,
    pub ret: Timetable,
}

impl DayTimetables {
    pub fn compile(feed: &TimetableFeed, tables: &AccessTables, cfg: &RouterConfig) -> Self {
        let m0 = cfg.morning.iter().map(|w| w.start).min().unwrap_or(0);
        let e0 = cfg.evening.iter().map(|w| w.start).min().unwrap_or(0);
        DayTimetables {
            outbound: Timetable::compile(feed, &tables.transfers, m0, cfg.deadline.unwrap_or(Seconds::MAX)),
            ret: Timetable::compile(feed, &tables.transfers, e0, Seconds::MAX),
        }
    }
}

/// Per-window outcome: the (conditioned) duration and the scheduled
/// representative minute it was taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowResult {
    pub duration: Option<u32>,
    pub minute: Option<Seconds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariantKind {
    Scheduled,
    Actual,
}

impl VariantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Scheduled => "scheduled",
            VariantKind::Actual => "actual",
        }
    }
}

impl FromStr for VariantKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scheduled" => Ok(VariantKind::Scheduled),
            "actual" => Ok(VariantKind::Actual),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTripTime {
    pub cell_id: String,
    pub school_id: String,
    pub variant: VariantKind,
    pub day: NaiveDate,
    /// `None` is UNREACHABLE.
    pub t_ik: Option<f64>,
    pub outbound: Vec<WindowResult>,
    pub ret: Vec<WindowResult>,
}

/// Feasible window with the largest share; earlier windows win ties.
fn pick_reference(choices: &[Option<Choice>], windows: &[TimeWindow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in choices.iter().enumerate() {
        if c.is_some() && best.is_none_or(|b| windows[i].share > windows[b].share) {
            best = Some(i);
        }
    }
    best
}

/// Representative value per window on `sched`, optionally conditioned on
/// `actual` at the same minute. Also returns the scheduled choice at each
/// representative minute.
fn evaluate_windows(
    windows: &[TimeWindow],
    p: Percentile,
    sched: (&DestinationProfile, &Origin),
    actual: Option<(&DestinationProfile, &Origin)>,
) -> (Vec<WindowResult>, Vec<Option<Choice>>) {
    let mut results = Vec::with_capacity(windows.len());
    let mut sched_choices = Vec::with_capacity(windows.len());
    for w in windows {
        let prof = profile(sched.0, sched.1, w);
        let rep = representative(&prof.minutes, &prof.durations(), p);
        let duration = match (rep, actual) {
            (None, _) => None,
            (Some((d, _)), None) => Some(d),
            (Some((_, m)), Some((dest, origin))) => dest.query(origin, m).map(|c| c.duration()),
        };
        results.push(WindowResult { duration, minute: rep.map(|r| r.1) });
        sched_choices.push(rep.and_then(|(_, m)| prof.at(m).copied()));
    }
    (results, sched_choices)
}

/// One [`RoundTripTime`] per (cell, school), sorted by (cell, school). With
/// `actual` set, window values are actual-operations durations conditioned on
/// the scheduled representative minutes.
pub fn build_matrix(
    sched: &DayTimetables,
    actual: Option<&DayTimetables>,
    tables: &AccessTables,
    cells: &[String],
    schools: &[String],
    cfg: &RouterConfig,
    day: NaiveDate,
) -> Vec<RoundTripTime> {
    let variant = if actual.is_some() { VariantKind::Actual } else { VariantKind::Scheduled };
    let slack = cfg.transfer_slack_s;
    let ep_s_out = Endpoints { tables, timetable: &sched.outbound };
    let ep_s_ret = Endpoints { tables, timetable: &sched.ret };
    let ep_a = actual.map(|a| (Endpoints { tables, timetable: &a.outbound }, Endpoints { tables, timetable: &a.ret }));

    let out_sched: Vec<DestinationProfile> = schools
        .par_iter()
        .map(|k| DestinationProfile::build(&sched.outbound, &ep_s_out.school_legs(k), slack, cfg.deadline))
        .collect();
    let out_act: Option<Vec<DestinationProfile>> = ep_a.as_ref().map(|(eo, _)| {
        schools
            .par_iter()
            .map(|k| DestinationProfile::build(eo.timetable, &eo.school_legs(k), slack, cfg.deadline))
            .collect()
    });

    let mut rows: Vec<RoundTripTime> = cells
        .par_iter()
        .flat_map_iter(|cell| {
            // outbound per school
            let mut outbound = Vec::with_capacity(schools.len());
            for (ki, school) in schools.iter().enumerate() {
                let (o_s, _) = ep_s_out.od(cell, school, Direction::Outbound);
                let o_a = ep_a.as_ref().map(|(eo, _)| eo.od(cell, school, Direction::Outbound).0);
                let act = out_act.as_ref().zip(o_a.as_ref()).map(|(d, o)| (&d[ki], o));
                let (res, sc) = evaluate_windows(&cfg.morning, cfg.percentile, (&out_sched[ki], &o_s), act);
                // Bicycle pairing follows the scheduled plan in the reference
                // window, for both variants.
                let reference = pick_reference(&sc, &cfg.morning);
                let constraint = ReturnConstraint::from_choice(reference.and_then(|i| sc[i].as_ref()));
                let constraint = translate(constraint, &sched.outbound, &sched.ret);
                outbound.push((res, constraint));
            }
            let needed: BTreeSet<ReturnConstraint> = outbound.iter().map(|(_, c)| *c).collect();
            let mut ret_profiles: BTreeMap<ReturnConstraint, (DestinationProfile, Option<DestinationProfile>)> = BTreeMap::new();
            for &c in &needed {
                let d_s = DestinationProfile::build(&sched.ret, &ep_s_ret.cell_egress(cell, c), slack, None);
                let d_a = ep_a.as_ref().map(|(_, er)| {
                    let ca = translate(c, &sched.ret, er.timetable);
                    DestinationProfile::build(er.timetable, &er.cell_egress(cell, ca), slack, None)
                });
                ret_profiles.insert(c, (d_s, d_a));
            }
            let rows: Vec<RoundTripTime> = schools
                .iter()
                .zip(outbound)
                .map(|(school, (out_res, c))| {
                    let (d_s, d_a) = &ret_profiles[&c];
                    let (o_s, _) = ep_s_ret.od(cell, school, Direction::Return(c));
                    let o_a = ep_a.as_ref().map(|(_, er)| er.od(cell, school, Direction::Return(translate(c, &sched.ret, er.timetable))).0);
                    let act = d_a.as_ref().zip(o_a.as_ref());
                    let (ret_res, _) = evaluate_windows(&cfg.evening, cfg.percentile, (d_s, &o_s), act);
                    let t_ik = round_trip(
                        &out_res.iter().zip(&cfg.morning).map(|(r, w)| (r.duration, w.share)).collect::<Vec<_>>(),
                        &ret_res.iter().zip(&cfg.evening).map(|(r, w)| (r.duration, w.share)).collect::<Vec<_>>(),
                        cfg.strict_window_exclusion,
                    );
                    RoundTripTime {
                        cell_id: cell.clone(),
                        school_id: school.clone(),
                        variant,
                        day,
                        t_ik,
                        outbound: out_res,
                        ret: ret_res,
                    }
                })
                .collect();
            rows
        })
        .collect();
    rows.sort_by(|a, b| (&a.cell_id, &a.school_id).cmp(&(&b.cell_id, &b.school_id)));
    rows
}

/// Map a station constraint between timetables with possibly different
/// stop numbering.
fn translate(c: ReturnConstraint, from: &Timetable, to: &Timetable) -> ReturnConstraint {
    match c {
        ReturnConstraint::NoBike => c,
        ReturnConstraint::BikeAt(s) => to.stop_index(from.stop_id(s)).map_or(ReturnConstraint::NoBike, ReturnConstraint::BikeAt),
    }
}

fn fmt_minutes(results: &[WindowResult]) -> String {
    results
        .iter()
        .map(|r| r.minute.map_or_else(|| INFEASIBLE.to_string(), |m| format_time(m)[..5].to_string()))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn matrix_header(n_out: usize, n_ret: usize) -> Vec<String> {
    let mut h: Vec<String> = ["cell_id", "school_id", "variant", "day", "t_ik_s"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=n_out).map(|i| format!("outbound_w{i}_s")));
    h.extend((1..=n_ret).map(|i| format!("return_w{i}_s")));
    h.push("outbound_minutes".into());
    h.push("return_minutes".into());
    h
}

pub fn write_matrix<W: Write>(rows: &[RoundTripTime], n_out: usize, n_ret: usize, w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(matrix_header(n_out, n_ret))?;
    for r in rows {
        let mut rec = vec![
            r.cell_id.clone(),
            r.school_id.clone(),
            r.variant.as_str().to_string(),
            r.day.to_string(),
            r.t_ik.map_or_else(|| UNREACHABLE.to_string(), |t| t.to_string()),
        ];
        for res in r.outbound.iter().chain(&r.ret) {
            rec.push(res.duration.map_or_else(|| INFEASIBLE.to_string(), |d| d.to_string()));
        }
        rec.push(fmt_minutes(&r.outbound));
        rec.push(fmt_minutes(&r.ret));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: R) -> Result<Vec<RoundTripTime>, RouterError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let n_out = headers.iter().filter(|h| h.starts_with("outbound_w")).count();
    let n_ret = headers.iter().filter(|h| h.starts_with("return_w")).count();
    if headers.len() != 7 + n_out + n_ret || headers.get(0) != Some("cell_id") {
        return Err(RouterError::MatrixRow { line: 1, message: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| RouterError::MatrixRow { line, message };
        let variant: VariantKind = rec[2].parse().map_err(bad)?;
        let day = NaiveDate::parse_from_str(&rec[3], "%Y-%m-%d").map_err(|e| bad(format!("day: {e}")))?;
        let t_ik = match &rec[4] {
            UNREACHABLE => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("t_ik_s: {e}")))?),
        };
        let minutes = |field: &str, n: usize| -> Result<Vec<Option<Seconds>>, RouterError> {
            let v: Vec<Option<Seconds>> = field
                .split('|')
                .map(|m| if m == INFEASIBLE { Ok(None) } else { parse_time(&format!("{m}:00")).map(Some).ok_or(m) })
                .collect::<Result<_, _>>()
                .map_err(|m| bad(format!("minute {m:?}")))?;
            if v.len() != n {
                return Err(bad(format!("expected {n} minutes")));
            }
            Ok(v)
        };
        let out_m = minutes(&rec[5 + n_out + n_ret], n_out)?;
        let ret_m = minutes(&rec[6 + n_out + n_ret], n_ret)?;
        let window = |i: usize, minute: Option<Seconds>| -> Result<WindowResult, RouterError> {
            let duration = match &rec[5 + i] {
                INFEASIBLE => None,
                s => Some(s.parse::<u32>().map_err(|e| bad(format!("window {}: {e}", i + 1)))?),
            };
            Ok(WindowResult { duration, minute })
        };
        let outbound = (0..n_out).map(|i| window(i, out_m[i])).collect::<Result<_, _>>()?;
        let ret = (0..n_ret).map(|i| window(n_out + i, ret_m[i])).collect::<Result<_, _>>()?;
        rows.push(RoundTripTime { cell_id: rec[0].to_string(), school_id: rec[1].to_string(), variant, day, t_ik, outbound, ret });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtfs::tests::minimal_feed;
    use crate::gtfs::{Stop, StopTime, Trip};

    fn hm(h: u32, m: u32) -> Seconds {
        h * 3600 + m * 60
    }

    /// Cell "C" walks 300 s to stop A; bus T1 departs A 08:00, reaches B
    /// 08:10; school "S" is 120 s from B.
    fn worked_example() -> (Timetable, AccessTables) {
        let feed = minimal_feed();
        let mut tables = AccessTables::default();
        tables.walk.entries.insert(("C".into(), "A".into()), 300);
        tables.walk.entries.insert(("S".into(), "B".into()), 120);
        (Timetable::compile(&feed, &tables.transfers, 0, Seconds::MAX), tables)
    }

    #[test]
    fn single_bus_trace() {
        let (tt, tables) = worked_example();
        let ep = Endpoints { tables: &tables, timetable: &tt };
        let (origin, egress) = ep.od("C", "S", Direction::Outbound);
        let dest = DestinationProfile::build(&tt, &egress, 60, Some(hm(8, 40)));
        assert_eq!(dest.query(&origin, hm(7, 50)).map(|c| c.duration()), Some(1320));
        assert_eq!(dest.query(&origin, hm(7, 55)).map(|c| c.duration()), Some(1020));
        assert_eq!(dest.query(&origin, hm(7, 56)), None);
        let it = dest.itinerary(&tt, &dest.query(&origin, hm(7, 50)).unwrap());
        assert_eq!(it.rides(), 1);
        assert_eq!(it.to_string(), "walk:origin→A@07:50:00|ride[T1]:A→B@08:00:00|walk:B→destination@08:10:00");
    }

    #[test]
    fn deadline_discards_late_arrivals() {
        let (tt, tables) = worked_example();
        let ep = Endpoints { tables: &tables, timetable: &tt };
        let (origin, egress) = ep.od("C", "S", Direction::Outbound);
        // arrival 08:12 is after an 08:11 deadline
        let dest = DestinationProfile::build(&tt, &egress, 60, Some(hm(8, 11)));
        assert_eq!(dest.query(&origin, hm(7, 50)), None);
        let dest = DestinationProfile::build(&tt, &egress, 60, Some(hm(8, 12)));
        assert!(dest.query(&origin, hm(7, 50)).is_some());
    }

    #[test]
    fn walk_only_every_minute() {
        let feed = TimetableFeed::empty(crate::gtfs::FeedVariant::Scheduled);
        let mut tables = AccessTables::default();
        // 800 m at 4 km/h
        tables.walk.entries.insert(("C".into(), "S".into()), 720);
        let tt = Timetable::compile(&feed, &tables.transfers, 0, Seconds::MAX);
        let ep = Endpoints { tables: &tables, timetable: &tt };
        let (origin, egress) = ep.od("C", "S", Direction::Outbound);
        let dest = DestinationProfile::build(&tt, &egress, 60, Some(hm(8, 40)));
        let w = TimeWindow { start: hm(7, 0), end: hm(7, 30), share: 1.0 };
        let p = profile(&dest, &origin, &w);
        assert_eq!(p.minutes.len(), 30);
        assert!(p.durations().iter().all(|d| *d == Some(720)));
        let far = Origin::new(vec![], None);
        assert!(profile(&dest, &far, &w).durations().iter().all(Option::is_none));
    }

    /// Feeder F into X at 08:00; connector G leaves X at `g_dep`.
    fn transfer_feed(g_dep: Seconds) -> TimetableFeed {
        let mut feed = minimal_feed();
        feed.trips.clear();
        for (id, lat) in [("X", 36.3), ("Y", 36.4)] {
            feed.stops.insert(id.into(), Stop { id: id.into(), name: id.into(), lat, lon: 138.0, kind: StopKind::BusStop });
        }
        let st = |s: &str, q, t| StopTime { stop_id: s.into(), stop_sequence: q, arrival: t, departure: t };
        feed.trips.insert(
            "F".into(),
            Trip { id: "F".into(), route_id: "R".into(), service_id: "WK".into(), stop_times: vec![st("A", 1, hm(7, 50)), st("X", 2, hm(8, 0))] },
        );
        feed.trips.insert(
            "G".into(),
            Trip { id: "G".into(), route_id: "R".into(), service_id: "WK".into(), stop_times: vec![st("X", 1, g_dep), st("Y", 2, g_dep + 600)] },
        );
        feed
    }

    #[test]
    fn transfer_slack() {
        let mut tables = AccessTables::default();
        tables.walk.entries.insert(("C".into(), "A".into()), 60);
        tables.walk.entries.insert(("S".into(), "Y".into()), 0);
        for (g_dep, ok) in [(hm(8, 0) + 59, false), (hm(8, 1), true)] {
            let feed = transfer_feed(g_dep);
            let tt = Timetable::compile(&feed, &tables.transfers, 0, Seconds::MAX);
            let ep = Endpoints { tables: &tables, timetable: &tt };
            let (origin, egress) = ep.od("C", "S", Direction::Outbound);
            let dest = DestinationProfile::build(&tt, &egress, 60, None);
            let c = dest.query(&origin, hm(7, 45));
            assert_eq!(c.is_some(), ok, "connector at {g_dep}");
            if let Some(c) = c {
                assert_eq!(c.rides(), 2);
                assert_eq!(c.arrival, g_dep + 600);
                assert_eq!(dest.itinerary(&tt, &c).trip_ids(), vec!["F", "G"]);
            }
        }
    }

    #[test]
    fn cycle_return_pinned_to_station() {
        let mut tables = AccessTables::default();
        tables.walk.entries.insert(("C".into(), "A".into()), 400);
        tables.cycle.entries.insert(("C".into(), "B".into()), 200);
        let feed = minimal_feed();
        let tt = Timetable::compile(&feed, &tables.transfers, 0, Seconds::MAX);
        let ep = Endpoints { tables: &tables, timetable: &tt };
        let b = tt.stop_index("B").unwrap();
        let legs = ep.cell_egress("C", ReturnConstraint::BikeAt(b));
        assert_eq!(legs, vec![AccessLeg { stop: b, mode: Mode::Cycle, secs: 200 }]);
        let legs = ep.cell_egress("C", ReturnConstraint::NoBike);
        assert_eq!(legs, vec![AccessLeg { stop: tt.stop_index("A").unwrap(), mode: Mode::Walk, secs: 400 }]);
    }

    #[test]
    fn walking_preferred_on_ties() {
        let (tt, _) = worked_example();
        let a = tt.stop_index("A").unwrap();
        let b = tt.stop_index("B").unwrap();
        let dest = DestinationProfile::build(&tt, &[AccessLeg { stop: b, mode: Mode::Walk, secs: 0 }], 60, None);
        let origin = Origin::new(
            vec![AccessLeg { stop: a, mode: Mode::Cycle, secs: 100 }, AccessLeg { stop: a, mode: Mode::Walk, secs: 300 }],
            None,
        );
        let c = dest.query(&origin, hm(7, 50)).unwrap();
        assert_eq!(c.cycle_station(), None);
        // only the cycle leg still makes it
        let c = dest.query(&origin, hm(7, 56)).unwrap();
        assert_eq!(c.cycle_station(), Some(a));
    }

    #[test]
    fn representatives() {
        let minutes: Vec<Seconds> = (0..30).map(|i| hm(7, 0) + i * 60).collect();
        let flat = vec![Some(900); 30];
        assert_eq!(representative(&minutes, &flat, Percentile::P25), Some((900, hm(7, 0))));
        let mut mixed: Vec<Option<u32>> = vec![Some(1800); 10];
        mixed.extend(vec![Some(1200); 10]);
        mixed.extend(vec![Some(600); 10]);
        assert_eq!(representative(&minutes, &mixed, Percentile::P25), Some((600, hm(7, 20))));
        assert_eq!(representative(&minutes, &mixed, Percentile::P50), Some((1200, hm(7, 10))));
        assert_eq!(representative(&minutes, &[None; 30], Percentile::P25), None);
        // infeasible minutes do not count towards the rank
        let mut sparse = vec![None; 26];
        sparse.extend([Some(100), Some(200), Some(300), Some(400)]);
        assert_eq!(representative(&minutes, &sparse, Percentile::P50), Some((200, minutes[27])));
    }

    #[test]
    fn eq1_examples() {
        let out: Vec<_> = MORNING_SHARES.iter().map(|&s| (Some(1800), s)).collect();
        let ret: Vec<_> = (0..8).map(|_| (Some(2100), 0.125)).collect();
        let t = round_trip(&out, &ret, false).unwrap();
        assert!((t - 3900.0).abs() < 1e-9);

        let mins = [60, 60, 30, 30, 30];
        let out: Vec<_> = mins.iter().zip(MORNING_SHARES).map(|(&m, s)| (Some(m * 60), s)).collect();
        let ret: Vec<_> = (0..8).map(|_| (Some(1800), 0.125)).collect();
        let t = round_trip(&out, &ret, false).unwrap() / 60.0;
        assert!((t - 62.46).abs() < 1e-9, "{t}");
    }

    #[test]
    fn eq1_renormalises_or_excludes() {
        let out = vec![(None, 0.5), (Some(1000), 0.25), (Some(2000), 0.25)];
        let ret = vec![(Some(600), 1.0)];
        let t = round_trip(&out, &ret, false).unwrap();
        assert!((t - 2100.0).abs() < 1e-9);
        assert_eq!(round_trip(&out, &ret, true), None);
        assert_eq!(round_trip(&[(None, 1.0)], &ret, false), None);
        assert_eq!(round_trip(&ret, &[(None, 0.5), (None, 0.5)], false), None);
    }

    #[test]
    fn window_validation() {
        assert!(RouterConfig::default().validate().is_ok());
        let bad = consecutive_windows(0, &[0.5, 0.4]);
        assert!(matches!(validate_windows(&bad, "x"), Err(RouterError::SharesSum(_))));
        let short = vec![TimeWindow { start: 0, end: 900, share: 1.0 }];
        assert!(matches!(validate_windows(&short, "x"), Err(RouterError::WindowLength { .. })));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let day = NaiveDate::from_ymd_opt(2025, 12, 22).unwrap();
        let rows = vec![
            RoundTripTime {
                cell_id: "C01".into(),
                school_id: "SA".into(),
                variant: VariantKind::Actual,
                day,
                t_ik: Some(3747.6000000000004),
                outbound: vec![WindowResult { duration: Some(1800), minute: Some(hm(6, 7)) }, WindowResult { duration: None, minute: None }],
                ret: vec![WindowResult { duration: Some(2100), minute: Some(hm(16, 0)) }],
            },
            RoundTripTime {
                cell_id: "C02".into(),
                school_id: "SA".into(),
                variant: VariantKind::Actual,
                day,
                t_ik: None,
                outbound: vec![WindowResult { duration: None, minute: Some(hm(6, 10)) }, WindowResult { duration: None, minute: None }],
                ret: vec![WindowResult { duration: None, minute: None }],
            },
        ];
        let mut buf = Vec::new();
        write_matrix(&rows, 2, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cell_id,school_id,variant,day,t_ik_s,outbound_w1_s,outbound_w2_s,return_w1_s,outbound_minutes,return_minutes\n"));
        assert!(text.contains("C02,SA,actual,2025-12-22,UNREACH,INF,INF,INF,06:10|INF,INF"));
        assert_eq!(read_matrix(&buf[..]).unwrap(), rows);
    }
}
