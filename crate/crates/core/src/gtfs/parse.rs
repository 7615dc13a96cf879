use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{
    parse_gtfs_date, parse_time, validate_feed, FeedVariant, GtfsError, Route, RouteCategory, Rule,
    Stop, StopKind, StopTime, TimetableFeed, Trip,
};

/// A headered CSV file held in memory with source line numbers.
pub(crate) struct Table {
    file: String,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    pub(crate) fn read(path: &Path) -> Result<Self, GtfsError> {
        if !path.is_file() {
            return Err(GtfsError::MissingFile(path.to_path_buf()));
        }
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|source| GtfsError::Csv { file: file.clone(), source })?;
        let columns = rdr
            .headers()
            .map_err(|source| GtfsError::Csv { file: file.clone(), source })?
            .iter()
            .enumerate()
            // strip a UTF-8 BOM on the first header
            .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| GtfsError::Csv { file: file.clone(), source })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec));
        }
        Ok(Table { file, columns, rows })
    }

    pub(crate) fn has(&self, column: &str) -> bool {
        self.columns.contains_key(column)
    }

    pub(crate) fn get<'r>(&self, rec: &'r csv::StringRecord, column: &str) -> Option<&'r str> {
        self.columns.get(column).and_then(|&i| rec.get(i))
    }

    pub(crate) fn require<'r>(
        &self,
        line: u64,
        rec: &'r csv::StringRecord,
        column: &str,
    ) -> Result<&'r str, GtfsError> {
        match self.get(rec, column) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(self.field_error(line, column, "missing value")),
        }
    }

    pub(crate) fn field_error(&self, line: u64, field: &str, message: impl Into<String>) -> GtfsError {
        GtfsError::Field {
            file: self.file.clone(),
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn rows(&self) -> impl Iterator<Item = &(u64, csv::StringRecord)> {
        self.rows.iter()
    }
}

fn parse_f64(t: &Table, line: u64, rec: &csv::StringRecord, col: &str) -> Result<f64, GtfsError> {
    let raw = t.require(line, rec, col)?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| t.field_error(line, col, format!("not a number: {raw:?}")))
}

/// Load and validate a GTFS directory.
pub fn parse_feed(dir: &Path) -> Result<TimetableFeed, GtfsError> {
    if dir.join("frequencies.txt").is_file() {
        return Err(GtfsError::FrequenciesUnsupported);
    }
    let mut feed = TimetableFeed::empty(FeedVariant::Scheduled);

    let stops = Table::read(&dir.join("stops.txt"))?;
    if !stops.has("ext_stop_kind") {
        let msg = "stops.txt has no ext_stop_kind column; every stop defaults to bus_stop".to_string();
        log::warn!("{msg}");
        feed.warnings.push(msg);
    }
    for (line, rec) in stops.rows() {
        let id = stops.require(*line, rec, "stop_id")?.to_string();
        let kind = match stops.get(rec, "ext_stop_kind").filter(|s| !s.is_empty()) {
            None => StopKind::BusStop,
            Some(raw) => StopKind::parse(raw)
                .ok_or_else(|| stops.field_error(*line, "ext_stop_kind", format!("unknown kind {raw:?}")))?,
        };
        let stop = Stop {
            name: stops.get(rec, "stop_name").unwrap_or_default().to_string(),
            lat: parse_f64(&stops, *line, rec, "stop_lat")?,
            lon: parse_f64(&stops, *line, rec, "stop_lon")?,
            kind,
            id: id.clone(),
        };
        if !(-90.0..=90.0).contains(&stop.lat) || !(-180.0..=180.0).contains(&stop.lon) {
            return Err(stops.field_error(*line, "stop_lat", "coordinate out of range"));
        }
        if feed.stops.insert(id.clone(), stop).is_some() {
            return Err(stops.field_error(*line, "stop_id", format!("duplicate stop_id {id:?}")));
        }
    }

    let routes = Table::read(&dir.join("routes.txt"))?;
    for (line, rec) in routes.rows() {
        let id = routes.require(*line, rec, "route_id")?.to_string();
        let category = match routes.get(rec, "ext_category").filter(|s| !s.is_empty()) {
            None => RouteCategory::Regular,
            Some(raw) => RouteCategory::parse(raw)
                .ok_or_else(|| routes.field_error(*line, "ext_category", format!("unknown category {raw:?}")))?,
        };
        let name = routes
            .get(rec, "route_short_name")
            .filter(|s| !s.is_empty())
            .or_else(|| routes.get(rec, "route_long_name"))
            .unwrap_or_default()
            .to_string();
        if feed.routes.insert(id.clone(), Route { id: id.clone(), name, category }).is_some() {
            return Err(routes.field_error(*line, "route_id", format!("duplicate route_id {id:?}")));
        }
    }

    read_calendars(dir, &mut feed)?;

    let trips = Table::read(&dir.join("trips.txt"))?;
    for (line, rec) in trips.rows() {
        let id = trips.require(*line, rec, "trip_id")?.to_string();
        let route_id = trips.require(*line, rec, "route_id")?.to_string();
        let service_id = trips.require(*line, rec, "service_id")?.to_string();
        if !feed.routes.contains_key(&route_id) {
            return Err(trips.field_error(*line, "route_id", format!("unresolved route_id {route_id:?}")));
        }
        if !feed.calendars.contains_key(&service_id) {
            return Err(trips.field_error(*line, "service_id", format!("unresolved service_id {service_id:?}")));
        }
        let trip = Trip { id: id.clone(), route_id, service_id, stop_times: Vec::new() };
        if feed.trips.insert(id.clone(), trip).is_some() {
            return Err(trips.field_error(*line, "trip_id", format!("duplicate trip_id {id:?}")));
        }
    }

    let st = Table::read(&dir.join("stop_times.txt"))?;
    let mut lines: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (line, rec) in st.rows() {
        let trip_id = st.require(*line, rec, "trip_id")?;
        let stop_id = st.require(*line, rec, "stop_id")?.to_string();
        let seq_raw = st.require(*line, rec, "stop_sequence")?;
        let stop_sequence: u32 = seq_raw
            .parse()
            .map_err(|_| st.field_error(*line, "stop_sequence", format!("not an integer: {seq_raw:?}")))?;
        let time = |col: &str| -> Result<Option<u32>, GtfsError> {
            match st.get(rec, col).filter(|s| !s.is_empty()) {
                None => Ok(None),
                Some(raw) => parse_time(raw)
                    .map(Some)
                    .ok_or_else(|| st.field_error(*line, col, format!("malformed time {raw:?}"))),
            }
        };
        let (arrival, departure) = match (time("arrival_time")?, time("departure_time")?) {
            (Some(a), Some(d)) => (a, d),
            (Some(a), None) => (a, a),
            (None, Some(d)) => (d, d),
            (None, None) => return Err(st.field_error(*line, "arrival_time", "missing time")),
        };
        if !feed.stops.contains_key(&stop_id) {
            return Err(st.field_error(*line, "stop_id", format!("unresolved stop_id {stop_id:?}")));
        }
        let Some(trip) = feed.trips.get_mut(trip_id) else {
            return Err(st.field_error(*line, "trip_id", format!("unresolved trip_id {trip_id:?}")));
        };
        trip.stop_times.push(StopTime { stop_id, stop_sequence, arrival, departure });
        lines.entry(trip_id.to_string()).or_default().push(*line);
    }
    for (trip_id, trip) in feed.trips.iter_mut() {
        let trip_lines = lines.remove(trip_id).unwrap_or_default();
        let mut paired: Vec<_> = trip.stop_times.drain(..).zip(trip_lines).collect();
        paired.sort_by_key(|(s, _)| s.stop_sequence);
        for (i, (s, line)) in paired.iter().enumerate() {
            let prev_ok = i == 0 || {
                let p = &paired[i - 1].0;
                p.stop_sequence < s.stop_sequence && s.arrival >= p.departure
            };
            if s.departure < s.arrival || !prev_ok {
                if i > 0 && paired[i - 1].0.stop_sequence == s.stop_sequence {
                    return Err(GtfsError::Field {
                        file: "stop_times.txt".into(),
                        line: *line,
                        field: "stop_sequence".into(),
                        message: format!("duplicate stop_sequence in trip {trip_id}"),
                    });
                }
                return Err(GtfsError::NonMonotone {
                    file: "stop_times.txt".into(),
                    line: *line,
                    trip_id: trip_id.clone(),
                });
            }
        }
        trip.stop_times = paired.into_iter().map(|(s, _)| s).collect();
    }

    // remaining structural rules (e.g. trips with fewer than two stop times)
    if let Some(v) = validate_feed(&feed)
        .into_iter()
        .find(|v| v.rule != Rule::CoordinateOutOfRange)
    {
        return Err(GtfsError::Invalid(v.to_string()));
    }
    Ok(feed)
}

fn read_calendars(dir: &Path, feed: &mut TimetableFeed) -> Result<(), GtfsError> {
    let cal_path = dir.join("calendar.txt");
    let dates_path = dir.join("calendar_dates.txt");
    if !cal_path.is_file() && !dates_path.is_file() {
        return Err(GtfsError::MissingFile(cal_path));
    }
    if cal_path.is_file() {
        let cal = Table::read(&cal_path)?;
        const DAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
        for (line, rec) in cal.rows() {
            let id = cal.require(*line, rec, "service_id")?.to_string();
            let mut weekdays = [false; 7];
            for (i, day) in DAYS.iter().enumerate() {
                weekdays[i] = match cal.require(*line, rec, day)? {
                    "1" => true,
                    "0" => false,
                    other => return Err(cal.field_error(*line, day, format!("expected 0 or 1, got {other:?}"))),
                };
            }
            let date = |col: &str| {
                let raw = cal.require(*line, rec, col)?;
                parse_gtfs_date(raw).ok_or_else(|| cal.field_error(*line, col, format!("malformed date {raw:?}")))
            };
            let (start, end) = (date("start_date")?, date("end_date")?);
            if end < start {
                return Err(cal.field_error(*line, "end_date", "end_date before start_date"));
            }
            let entry = feed.calendars.entry(id.clone()).or_default();
            entry.service_id = id;
            entry.weekdays = weekdays;
            entry.range = Some((start, end));
        }
    }
    if dates_path.is_file() {
        let cd = Table::read(&dates_path)?;
        for (line, rec) in cd.rows() {
            let id = cd.require(*line, rec, "service_id")?.to_string();
            let raw = cd.require(*line, rec, "date")?;
            let date = parse_gtfs_date(raw).ok_or_else(|| cd.field_error(*line, "date", format!("malformed date {raw:?}")))?;
            let entry = feed.calendars.entry(id.clone()).or_default();
            entry.service_id = id;
            match cd.require(*line, rec, "exception_type")? {
                "1" => {
                    entry.added.insert(date);
                }
                "2" => {
                    entry.removed.insert(date);
                }
                other => {
                    return Err(cd.field_error(*line, "exception_type", format!("expected 1 or 2, got {other:?}")))
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtfs::{tests::minimal_feed, write_feed};
    use std::fs;

    fn write_minimal(dir: &Path) {
        fs::write(
            dir.join("stops.txt"),
            "stop_id,stop_name,stop_lat,stop_lon,ext_stop_kind\nA,Alpha,36.0,138.0,bus_stop\nB,Beta,36.01,138.0,rail_station\n",
        )
        .unwrap();
        fs::write(dir.join("routes.txt"), "route_id,route_short_name,ext_category,route_color\nR,Red,local,ff0000\n").unwrap();
        fs::write(dir.join("trips.txt"), "route_id,service_id,trip_id\nR,WK,T1\n").unwrap();
        fs::write(
            dir.join("stop_times.txt"),
            "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,08:00:00,08:00:00,A,1\nT1,08:10:00,08:10:00,B,2\n",
        )
        .unwrap();
        fs::write(
            dir.join("calendar.txt"),
            "service_id,monday,tuesday,wednesday,thursday,friday,saturday,sunday,start_date,end_date\nWK,1,1,1,1,1,0,0,20250101,20251231\n",
        )
        .unwrap();
    }

    #[test]
    fn parses_minimal_feed() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        let feed = parse_feed(dir.path()).unwrap();
        assert_eq!(feed.trips.len(), 1);
        assert_eq!(feed.trips["T1"].duration(), Some(600));
        assert_eq!(feed.stops["B"].kind, StopKind::RailStation);
        assert_eq!(feed.routes["R"].category, RouteCategory::Local);
        assert!(feed.warnings.is_empty());
    }

    #[test]
    fn reversed_departures_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(
            dir.path().join("stop_times.txt"),
            "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,08:10:00,08:10:00,A,1\nT1,08:05:00,08:05:00,B,2\n",
        )
        .unwrap();
        let err = parse_feed(dir.path()).unwrap_err();
        assert!(err.to_string().contains("non-monotone stop_times"), "{err}");
        assert!(err.to_string().contains("stop_times.txt:3"), "{err}");
    }

    #[test]
    fn malformed_time_names_file_line_field() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(
            dir.path().join("stop_times.txt"),
            "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,08:00:00,08:00:00,A,1\nT1,8h10,08:10:00,B,2\n",
        )
        .unwrap();
        let err = parse_feed(dir.path()).unwrap_err().to_string();
        assert!(err.contains("stop_times.txt:3: arrival_time"), "{err}");
    }

    #[test]
    fn over_midnight_time_kept() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(
            dir.path().join("stop_times.txt"),
            "trip_id,arrival_time,departure_time,stop_id,stop_sequence\nT1,24:50:00,24:50:00,A,1\nT1,25:15:00,25:15:00,B,2\n",
        )
        .unwrap();
        let feed = parse_feed(dir.path()).unwrap();
        assert_eq!(feed.trips["T1"].stop_times[1].departure, 90_900);
    }

    #[test]
    fn missing_file_and_bad_reference() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::remove_file(dir.path().join("routes.txt")).unwrap();
        assert!(matches!(parse_feed(dir.path()), Err(GtfsError::MissingFile(p)) if p.ends_with("routes.txt")));

        write_minimal(dir.path());
        fs::write(dir.path().join("trips.txt"), "route_id,service_id,trip_id\nNOPE,WK,T1\n").unwrap();
        let err = parse_feed(dir.path()).unwrap_err().to_string();
        assert!(err.contains("trips.txt:2: route_id"), "{err}");
    }

    #[test]
    fn frequencies_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(dir.path().join("frequencies.txt"), "trip_id,start_time,end_time,headway_secs\n").unwrap();
        assert!(matches!(parse_feed(dir.path()), Err(GtfsError::FrequenciesUnsupported)));
    }

    #[test]
    fn missing_kind_column_defaults_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(dir.path().join("stops.txt"), "stop_id,stop_name,stop_lat,stop_lon\nA,a,36,138\nB,b,36.01,138\n").unwrap();
        let feed = parse_feed(dir.path()).unwrap();
        assert!(feed.stops.values().all(|s| s.kind == StopKind::BusStop));
        assert_eq!(feed.warnings.len(), 1);
    }

    #[test]
    fn round_trip_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let feed = minimal_feed();
        write_feed(&feed, dir.path()).unwrap();
        let back = parse_feed(dir.path()).unwrap();
        assert_eq!(back.stops, feed.stops);
        assert_eq!(back.routes, feed.routes);
        assert_eq!(back.trips, feed.trips);
        assert_eq!(back.calendars, feed.calendars);
    }
}
