use std::fs;
use std::path::Path;

use super::{format_gtfs_date, format_time, GtfsError, TimetableFeed};

fn csv_err(file: &str) -> impl Fn(csv::Error) -> GtfsError + '_ {
    move |source| GtfsError::Csv { file: file.to_string(), source }
}

/// Write `feed` as a GTFS directory. Output is deterministic: rows follow id
/// order, stop times follow trip then sequence order.
pub fn write_feed(feed: &TimetableFeed, dir: &Path) -> Result<(), GtfsError> {
    fs::create_dir_all(dir).map_err(|source| GtfsError::Io { path: dir.to_path_buf(), source })?;

    let mut w = csv::Writer::from_path(dir.join("stops.txt")).map_err(csv_err("stops.txt"))?;
    w.write_record(["stop_id", "stop_name", "stop_lat", "stop_lon", "ext_stop_kind"])
        .map_err(csv_err("stops.txt"))?;
    for s in feed.stops.values() {
        w.write_record([&s.id, &s.name, &s.lat.to_string(), &s.lon.to_string(), s.kind.as_str()])
            .map_err(csv_err("stops.txt"))?;
    }
    w.flush().map_err(|source| GtfsError::Io { path: dir.join("stops.txt"), source })?;

    let mut w = csv::Writer::from_path(dir.join("routes.txt")).map_err(csv_err("routes.txt"))?;
    w.write_record(["route_id", "route_short_name", "ext_category"])
        .map_err(csv_err("routes.txt"))?;
    for r in feed.routes.values() {
        w.write_record([&r.id, &r.name, r.category.as_str()]).map_err(csv_err("routes.txt"))?;
    }
    w.flush().map_err(|source| GtfsError::Io { path: dir.join("routes.txt"), source })?;

    let mut w = csv::Writer::from_path(dir.join("trips.txt")).map_err(csv_err("trips.txt"))?;
    w.write_record(["route_id", "service_id", "trip_id"]).map_err(csv_err("trips.txt"))?;
    for t in feed.trips.values() {
        w.write_record([&t.route_id, &t.service_id, &t.id]).map_err(csv_err("trips.txt"))?;
    }
    w.flush().map_err(|source| GtfsError::Io { path: dir.join("trips.txt"), source })?;

    let mut w = csv::Writer::from_path(dir.join("stop_times.txt")).map_err(csv_err("stop_times.txt"))?;
    w.write_record(["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"])
        .map_err(csv_err("stop_times.txt"))?;
    for t in feed.trips.values() {
        for st in &t.stop_times {
            w.write_record([
                &t.id,
                &format_time(st.arrival),
                &format_time(st.departure),
                &st.stop_id,
                &st.stop_sequence.to_string(),
            ])
            .map_err(csv_err("stop_times.txt"))?;
        }
    }
    w.flush().map_err(|source| GtfsError::Io { path: dir.join("stop_times.txt"), source })?;

    let mut w = csv::Writer::from_path(dir.join("calendar.txt")).map_err(csv_err("calendar.txt"))?;
    w.write_record([
        "service_id", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
        "start_date", "end_date",
    ])
    .map_err(csv_err("calendar.txt"))?;
    for c in feed.calendars.values() {
        if let Some((start, end)) = c.range {
            let mut rec = vec![c.service_id.clone()];
            rec.extend(c.weekdays.iter().map(|&d| if d { "1" } else { "0" }.to_string()));
            rec.push(format_gtfs_date(start));
            rec.push(format_gtfs_date(end));
            w.write_record(&rec).map_err(csv_err("calendar.txt"))?;
        }
    }
    w.flush().map_err(|source| GtfsError::Io { path: dir.join("calendar.txt"), source })?;

    let mut w = csv::Writer::from_path(dir.join("calendar_dates.txt")).map_err(csv_err("calendar_dates.txt"))?;
    w.write_record(["service_id", "date", "exception_type"]).map_err(csv_err("calendar_dates.txt"))?;
    for c in feed.calendars.values() {
        let mut rows: Vec<_> = c.added.iter().map(|d| (*d, "1")).chain(c.removed.iter().map(|d| (*d, "2"))).collect();
        rows.sort();
        for (d, kind) in rows {
            w.write_record([c.service_id.as_str(), &format_gtfs_date(d), kind])
                .map_err(csv_err("calendar_dates.txt"))?;
        }
    }
    w.flush().map_err(|source| GtfsError::Io { path: dir.join("calendar_dates.txt"), source })?;
    Ok(())
}
