//! Study workflow: actual feeds per day, travel-time matrices, indices,
//! GeoJSON and a markdown report, all under one output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, StudyConfig};
use crate::delay::{self, DelayError};
use crate::gtfs::{self, FeedVariant, GtfsError, StopKind, TimetableFeed};
use crate::indices::{self, CellAccessRecord, DayIndex, IndexError};
use crate::lucky_catch::{self, EventKind};
use crate::router::{self, DayTimetables, RouterConfig, RoundTripTime, RouterError, VariantKind};
use crate::street::{self, Cell, DesertMetric, LocalFrame, School, Site, SiteRole, StreetError, StreetGraph};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("{0}")]
    Internal(String),
}

impl PipelineError {
    /// 2 for bad input or configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Input { .. } => 2,
            PipelineError::Output { .. } | PipelineError::Internal(_) => 1,
        }
    }

    fn input(path: &Path, message: impl ToString) -> Self {
        PipelineError::Input { path: path.to_path_buf(), message: message.to_string() }
    }

    fn output(path: &Path, message: impl ToString) -> Self {
        PipelineError::Output { path: path.to_path_buf(), message: message.to_string() }
    }
}

impl From<IndexError> for PipelineError {
    fn from(e: IndexError) -> Self {
        PipelineError::Internal(e.to_string())
    }
}

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn actual_gtfs(&self, day: NaiveDate) -> PathBuf {
        self.root.join("actual").join(day.to_string())
    }
    pub fn delay_stats(&self) -> PathBuf {
        self.root.join("delay_stats.csv")
    }
    pub fn access(&self) -> PathBuf {
        self.root.join("access.csv")
    }
    pub fn matrix(&self, variant: VariantKind, day: NaiveDate) -> PathBuf {
        self.root.join("matrix").join(format!("{}_{day}.csv", variant.as_str()))
    }
    pub fn events(&self, day: NaiveDate) -> PathBuf {
        self.root.join("lucky_catch").join(format!("events_{day}.csv"))
    }
    pub fn indices(&self, name: &str) -> PathBuf {
        self.root.join("indices").join(name)
    }
    pub fn geojson(&self) -> PathBuf {
        self.root.join("cells.geojson")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::output(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::output(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), Box<dyn std::error::Error>>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|e| PipelineError::output(path, e))?;
    w.flush().map_err(|e| PipelineError::output(path, e))
}

fn gtfs_err(path: &Path, e: GtfsError) -> PipelineError {
    PipelineError::input(path, e)
}

fn street_err(e: StreetError) -> PipelineError {
    match &e {
        StreetError::MissingFile(p) => PipelineError::input(p, "missing file"),
        _ => PipelineError::Input { path: PathBuf::new(), message: e.to_string() },
    }
}

/// Inputs shared by every stage.
pub struct StudyContext {
    pub cfg: StudyConfig,
    pub router: RouterConfig,
    pub layout: Layout,
    pub feed: TimetableFeed,
    pub graph: StreetGraph,
    pub cells: Vec<Cell>,
    pub schools: Vec<School>,
    pub cell_sites: Vec<Site>,
    pub stop_sites: Vec<Site>,
    pub tables: street::AccessTables,
    pub warnings: Vec<String>,
}

impl StudyContext {
    pub fn load(cfg: StudyConfig) -> Result<Self, PipelineError> {
        let router = cfg.router_config()?;
        let feed = gtfs::parse_feed(&cfg.inputs.gtfs).map_err(|e| gtfs_err(&cfg.inputs.gtfs, e))?;
        let mut warnings = feed.warnings.clone();
        let graph = StreetGraph::load(&cfg.inputs.nodes, &cfg.inputs.edges).map_err(street_err)?;
        let cells = street::load_cells(&cfg.inputs.cells).map_err(street_err)?;
        let schools = street::load_schools(&cfg.inputs.schools).map_err(street_err)?;
        if schools.is_empty() {
            return Err(PipelineError::input(&cfg.inputs.schools, "no schools"));
        }
        let snap = cfg.access.max_snap_m;
        let cell_sites: Vec<Site> = cells.iter().map(|c| Site::new(&graph, c.cell_id.clone(), SiteRole::CellCentroid, c.lat, c.lon, snap)).collect();
        let school_sites: Vec<Site> = schools.iter().map(|s| Site::new(&graph, s.school_id.clone(), SiteRole::School, s.lat, s.lon, snap)).collect();
        let stop_sites = street::stop_sites(&graph, &feed, snap);
        for s in cell_sites.iter().chain(&school_sites).chain(&stop_sites).filter(|s| s.snap.is_none()) {
            warnings.push(format!("{} has no street node within {snap} m", s.id));
        }
        let tables = street::build_access_tables(&graph, &cell_sites, &school_sites, &stop_sites, &cfg.access);
        let layout = Layout { root: cfg.output_dir.clone() };
        Ok(StudyContext { cfg, router, layout, feed, graph, cells, schools, cell_sites, stop_sites, tables, warnings })
    }

    pub fn cell_ids(&self) -> Vec<String> {
        self.cells.iter().map(|c| c.cell_id.clone()).collect()
    }

    pub fn school_ids(&self) -> Vec<String> {
        self.schools.iter().map(|s| s.school_id.clone()).collect()
    }

    fn days(&self, only: Option<NaiveDate>) -> Result<Vec<NaiveDate>, PipelineError> {
        match only {
            None => Ok(self.cfg.days.clone()),
            Some(d) if self.cfg.days.contains(&d) => Ok(vec![d]),
            Some(d) => Err(ConfigError::Invalid(format!("day {d} is not in the configured day list")).into()),
        }
    }
}

/// Actual-operations feed for `day`, from the configured observation file.
pub fn synthesize_day(ctx: &StudyContext, day: NaiveDate) -> Result<(TimetableFeed, Vec<String>), PipelineError> {
    let cfg = &ctx.cfg;
    let path = cfg
        .inputs
        .observations
        .get(&day)
        .ok_or_else(|| ConfigError::Invalid(format!("no observation file configured for {day}")))?;
    let ingested = delay::ingest_observations(path, Some(&ctx.feed)).map_err(|e| match e {
        DelayError::MissingFile(p) => PipelineError::input(&p, "observation file not found"),
        other => PipelineError::input(path, other),
    })?;
    let mut warnings: Vec<String> = ingested.warnings.iter().map(|w| format!("{day}: {w}")).collect();
    let matched = delay::match_to_trips(&ingested.observations, &ctx.feed, day, &cfg.match_options());
    if !matched.unmatched.is_empty() {
        warnings.push(format!("{day}: {} observations matched no trip", matched.unmatched.len()));
    }
    let synth = delay::synthesize_actual_feed(&ctx.feed, day, &matched.traces, &cfg.synthesis_options());
    for (trip, err) in &synth.dropped {
        warnings.push(format!("{day}: trip {trip} dropped: {err}"));
    }
    let violations = gtfs::validate_feed(&synth.feed);
    if let Some(v) = violations.first() {
        return Err(PipelineError::input(path, format!("actual feed for {day} fails validation: {v}")));
    }
    Ok((synth.feed, warnings))
}

pub fn cmd_build_actual(ctx: &StudyContext, only: Option<NaiveDate>) -> Result<Vec<String>, PipelineError> {
    let mut warnings = Vec::new();
    let mut feeds = Vec::new();
    for day in ctx.days(only)? {
        let (feed, w) = synthesize_day(ctx, day)?;
        warnings.extend(w);
        let dir = ctx.layout.actual_gtfs(day);
        gtfs::write_feed(&feed, &dir).map_err(|e| PipelineError::output(&dir, e))?;
        feeds.push(feed);
    }
    let stats = delay::delay_stats(&ctx.feed, &feeds);
    write_with(&ctx.layout.delay_stats(), |w| Ok(delay::write_delay_stats(&stats, w)?))?;
    Ok(warnings)
}

/// Read back a feed written by [`cmd_build_actual`].
pub fn load_actual(ctx: &StudyContext, day: NaiveDate) -> Result<TimetableFeed, PipelineError> {
    let dir = ctx.layout.actual_gtfs(day);
    if !dir.is_dir() {
        return Err(PipelineError::input(&dir, "actual feed missing; run build-actual first"));
    }
    let mut feed = gtfs::parse_feed(&dir).map_err(|e| gtfs_err(&dir, e))?;
    feed.variant = FeedVariant::Actual(day);
    Ok(feed.restricted_to(day))
}

pub fn cmd_matrix(ctx: &StudyContext, variant: Option<VariantKind>, only: Option<NaiveDate>) -> Result<Vec<String>, PipelineError> {
    write_with(&ctx.layout.access(), |w| Ok(ctx.tables.write_csv(w)?))?;
    let cells = ctx.cell_ids();
    let schools = ctx.school_ids();
    let (n_out, n_ret) = (ctx.router.morning.len(), ctx.router.evening.len());
    let mut warnings = Vec::new();
    for day in ctx.days(only)? {
        let sched_feed = ctx.feed.restricted_to(day);
        if sched_feed.trips.is_empty() {
            warnings.push(format!("{day}: no active trips"));
        }
        let sched = DayTimetables::compile(&sched_feed, &ctx.tables, &ctx.router);
        if variant != Some(VariantKind::Actual) {
            let rows = router::build_matrix(&sched, None, &ctx.tables, &cells, &schools, &ctx.router, day);
            write_with(&ctx.layout.matrix(VariantKind::Scheduled, day), |w| Ok(router::write_matrix(&rows, n_out, n_ret, w)?))?;
        }
        if variant != Some(VariantKind::Scheduled) {
            let actual_feed = load_actual(ctx, day)?;
            let actual = DayTimetables::compile(&actual_feed, &ctx.tables, &ctx.router);
            let rows = router::build_matrix(&sched, Some(&actual), &ctx.tables, &cells, &schools, &ctx.router, day);
            write_with(&ctx.layout.matrix(VariantKind::Actual, day), |w| Ok(router::write_matrix(&rows, n_out, n_ret, w)?))?;
            let events = lucky_catch::detect_day(&sched, &actual, &sched_feed, &ctx.tables, &cells, &schools, &ctx.router, day);
            write_with(&ctx.layout.events(day), |w| Ok(lucky_catch::write_events_csv(&events, w)?))?;
        }
    }
    Ok(warnings)
}

pub fn read_matrix_file(path: &Path) -> Result<Vec<RoundTripTime>, PipelineError> {
    let f = File::open(path).map_err(|_| PipelineError::input(path, "matrix file missing; run matrix first"))?;
    router::read_matrix(f).map_err(|e: RouterError| PipelineError::input(path, e))
}

#[derive(Debug, Deserialize)]
struct EventRow {
    cell_id: String,
    kind: String,
}

fn read_event_kinds(path: &Path) -> Result<Vec<(String, EventKind)>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::input(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<EventRow>() {
        let row = row.map_err(|e| PipelineError::input(path, e))?;
        let kind = match row.kind.as_str() {
            "new_transfer" => EventKind::NewTransfer,
            "alternative_route" => EventKind::AlternativeRoute,
            "reduced_wait" => EventKind::ReducedWait,
            other => return Err(PipelineError::input(path, format!("unknown event kind {other:?}"))),
        };
        out.push((row.cell_id, kind));
    }
    Ok(out)
}

/// Index records from matrix files, as written by [`cmd_matrix`].
pub fn records_from_matrices(cfg: &StudyConfig, layout: &Layout, cells: &[Cell]) -> Result<Vec<CellAccessRecord>, PipelineError> {
    let mut sched = BTreeMap::new();
    let mut actual = BTreeMap::new();
    for &day in &cfg.days {
        sched.insert(day, read_matrix_file(&layout.matrix(VariantKind::Scheduled, day))?);
        actual.insert(day, read_matrix_file(&layout.matrix(VariantKind::Actual, day))?);
    }
    Ok(indices::compute_records(cells, &sched, &actual, &cfg.thresholds_min))
}

pub fn cmd_indices(cfg: &StudyConfig, cells: &[Cell]) -> Result<(Vec<CellAccessRecord>, Vec<String>), PipelineError> {
    let layout = Layout { root: cfg.output_dir.clone() };
    let mut warnings = Vec::new();
    let records = records_from_matrices(cfg, &layout, cells)?;
    let t = &cfg.thresholds_min;
    write_with(&layout.indices("index.csv"), |w| Ok(indices::write_index_csv(&records, w)?))?;
    write_with(&layout.indices("index_median.csv"), |w| Ok(write_median_with_reach(&records, w)?))?;
    let districts = indices::district_summary(&records, t, cfg.indices.percentile_direction);
    write_with(&layout.indices("district.csv"), |w| Ok(indices::write_district_csv(&districts, w)?))?;
    let gini = indices::gini_table(&records, t, cfg.indices.bootstrap_iterations, cfg.indices.seed, cfg.indices.bootstrap_mode)?;
    write_with(&layout.indices("gini.csv"), |w| Ok(indices::write_gini_csv(&gini, w)?))?;
    let eco = indices::eco_distribution(&records, t, &indices::eco_bins())?;
    write_with(&layout.indices("eco_bins.csv"), |w| Ok(indices::write_bins_csv(&eco, "population", w)?))?;
    let ogl = indices::ogl_distribution(&records, t, &indices::ogl_bins())?;
    write_with(&layout.indices("ogl_bins.csv"), |w| Ok(indices::write_bins_csv(&ogl, "cells", w)?))?;

    let mut kinds = Vec::new();
    for &day in &cfg.days {
        let p = layout.events(day);
        if p.is_file() {
            kinds.extend(read_event_kinds(&p)?);
        } else {
            warnings.push(format!("{day}: no lucky-catch events file"));
        }
    }
    let summary: Vec<_> = t
        .iter()
        .flat_map(|&tm| lucky_catch::summarize(kinds.iter().map(|(c, k)| (c.as_str(), *k)), &records, tm))
        .collect();
    write_with(&layout.indices("lucky_catch_summary.csv"), |w| Ok(lucky_catch::write_summary_csv(&summary, w)?))?;
    Ok((records, warnings))
}

fn write_median_with_reach<W: Write>(records: &[CellAccessRecord], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["cell_id", "district", "area", "population", "threshold_min", "eco_sched", "eco_actual", "ogl", "togl", "unreachable"])?;
    for r in records {
        for (tm, d) in &r.medians {
            w.write_record([
                r.cell_id.as_str(),
                &r.district,
                &r.area,
                &r.population.to_string(),
                &tm.to_string(),
                &d.eco_sched.to_string(),
                &d.eco_actual.to_string(),
                &d.ogl.to_string(),
                &d.togl.to_string(),
                &r.unreachable.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct MedianRow {
    cell_id: String,
    district: String,
    area: String,
    population: f64,
    threshold_min: u32,
    eco_sched: f64,
    eco_actual: f64,
    ogl: f64,
    togl: f64,
    unreachable: bool,
}

/// Records carrying only the median columns, read from `index_median.csv`.
pub fn read_median_records(path: &Path) -> Result<Vec<CellAccessRecord>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|_| PipelineError::input(path, "index file missing; run indices first"))?;
    let mut by: BTreeMap<String, CellAccessRecord> = BTreeMap::new();
    for row in rdr.deserialize::<MedianRow>() {
        let r = row.map_err(|e| PipelineError::input(path, e))?;
        let rec = by.entry(r.cell_id.clone()).or_insert_with(|| CellAccessRecord {
            cell_id: r.cell_id.clone(),
            population: r.population,
            district: r.district.clone(),
            area: r.area.clone(),
            per_day: BTreeMap::new(),
            medians: BTreeMap::new(),
            unreachable: r.unreachable,
        });
        rec.medians.insert(r.threshold_min, DayIndex { eco_sched: r.eco_sched, eco_actual: r.eco_actual, ogl: r.ogl, togl: r.togl });
    }
    Ok(by.into_values().collect())
}

/// Desert flag per cell id.
pub fn desert_flags(ctx: &StudyContext) -> BTreeMap<String, bool> {
    let radii = ctx.cfg.desert.radii();
    match ctx.cfg.desert.metric {
        DesertMetric::Radius => {
            let frame = LocalFrame::around(ctx.cells.iter().map(|c| (c.lat, c.lon)));
            let pts = |k: StopKind| -> Vec<(f64, f64)> { ctx.feed.stops.values().filter(|s| s.kind == k).map(|s| (s.lat, s.lon)).collect() };
            let (bus, rail) = (pts(StopKind::BusStop), pts(StopKind::RailStation));
            ctx.cells.iter().map(|c| (c.cell_id.clone(), street::classify_pt_desert(&frame, (c.lat, c.lon), &bus, &rail, &radii))).collect()
        }
        DesertMetric::Network => ctx
            .cell_sites
            .iter()
            .map(|s| (s.id.clone(), street::classify_pt_desert_network(&ctx.graph, s, &ctx.stop_sites, &radii)))
            .collect(),
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Square polygons around each centroid with index properties.
pub fn cells_geojson(cells: &[Cell], records: &[CellAccessRecord], deserts: &BTreeMap<String, bool>, size_m: f64) -> serde_json::Value {
    let by: BTreeMap<&str, &CellAccessRecord> = records.iter().map(|r| (r.cell_id.as_str(), r)).collect();
    let h = size_m / 2.0;
    let features: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| {
            let frame = LocalFrame::new(c.lat, c.lon);
            let ring: Vec<[f64; 2]> = [(-h, -h), (h, -h), (h, h), (-h, h), (-h, -h)]
                .iter()
                .map(|&(x, y)| {
                    let (lat, lon) = frame.to_latlon(x, y);
                    [round6(lon), round6(lat)]
                })
                .collect();
            let mut props = serde_json::Map::new();
            props.insert("cell_id".into(), json!(c.cell_id));
            props.insert("population".into(), json!(c.population_u15));
            props.insert("district".into(), json!(c.district));
            props.insert("area".into(), json!(c.area));
            props.insert("pt_desert".into(), json!(deserts.get(&c.cell_id).copied().unwrap_or(false)));
            if let Some(r) = by.get(c.cell_id.as_str()) {
                for (tm, d) in &r.medians {
                    props.insert(format!("eco_sched_{tm}"), json!(d.eco_sched));
                    props.insert(format!("eco_actual_{tm}"), json!(d.eco_actual));
                    props.insert(format!("ogl_{tm}"), json!(d.ogl));
                    props.insert(format!("togl_{tm}"), json!(d.togl));
                }
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": props,
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn cmd_geojson(ctx: &StudyContext) -> Result<(), PipelineError> {
    let records = read_median_records(&ctx.layout.indices("index_median.csv"))?;
    let deserts = desert_flags(ctx);
    let gj = cells_geojson(&ctx.cells, &records, &deserts, ctx.cfg.cell_size_m);
    write_with(&ctx.layout.geojson(), |w| {
        serde_json::to_writer(&mut *w, &gj)?;
        writeln!(w)?;
        Ok(())
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|_| PipelineError::input(path, "missing; run indices first"))?;
    rdr.records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| PipelineError::input(path, e)))
        .collect()
}

/// Markdown summary of the index outputs.
pub fn render_report(ctx: &StudyContext, records: &[CellAccessRecord], gini: &[Vec<String>], lucky: &[Vec<String>]) -> Result<String, PipelineError> {
    let cfg = &ctx.cfg;
    let t = &cfg.thresholds_min;
    let mut s = String::new();
    let days: Vec<String> = cfg.days.iter().map(|d| d.to_string()).collect();
    s += "# Accessibility report\n\n";
    s += &format!("Days: {}. Representative travel time: {}. Values are medians over days.\n\n", days.join(", "), cfg.router.percentile.as_str());

    s += "## ECO population distribution (scheduled)\n\n| ECO |";
    for tm in t {
        s += &format!(" T={tm} pop | share |");
    }
    s += "\n|---|";
    s += &"---|---|".repeat(t.len());
    s += "\n";
    let eco = indices::eco_distribution(records, t, &indices::eco_bins())?;
    for (i, label) in eco[0].1.iter().map(|r| r.label.clone()).enumerate() {
        s += &format!("| {label} |");
        for (_, rows) in &eco {
            s += &format!(" {} | {} |", rows[i].mass, pct(rows[i].share));
        }
        s += "\n";
    }

    let deserts = desert_flags(ctx);
    let total: f64 = ctx.cells.iter().map(|c| c.population_u15).sum();
    let desert_pop: f64 = ctx.cells.iter().filter(|c| deserts.get(&c.cell_id) == Some(&true)).map(|c| c.population_u15).sum();
    let desert_cells = deserts.values().filter(|&&d| d).count();
    s += &format!(
        "\n## PT Deserts\n\nPT Deserts: population {desert_pop} of {total} ({}), {desert_cells} cells.\n",
        pct(if total > 0.0 { desert_pop / total } else { 0.0 })
    );

    s += "\n## District ECO (population-weighted, scheduled)\n\n| District | T | p50 | p75 | population |\n|---|---|---|---|---|\n";
    for r in indices::district_summary(records, t, cfg.indices.percentile_direction) {
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
        s += &format!("| {} | {} | {} | {} | {} |\n", r.district, r.threshold_min, f(r.p50), f(r.p75), r.population);
    }

    s += "\n## Gini of ECO\n\n| Variant | T | Gini | 95% CI |\n|---|---|---|---|\n";
    for row in gini {
        let g = |i: usize| row[i].parse::<f64>().map_or(row[i].clone(), |x| format!("{x:.3}"));
        s += &format!("| {} | {} | {} | [{}, {}] |\n", row[0], row[1], g(2), g(3), g(4));
    }

    s += "\n## OGL distribution (cells)\n\n| OGL |";
    for tm in t {
        s += &format!(" T={tm} cells | share |");
    }
    s += "\n|---|";
    s += &"---|---|".repeat(t.len());
    s += "\n";
    let ogl = indices::ogl_distribution(records, t, &indices::ogl_bins())?;
    let labels: BTreeSet<String> = ogl.iter().flat_map(|(_, rows)| rows.iter().map(|r| r.label.clone())).collect();
    let order: Vec<String> = indices::ogl_bins()
        .into_iter()
        .map(|b| b.label)
        .chain([indices::OTHER_ROW.to_string(), indices::UNREACHABLE_ROW.to_string()])
        .filter(|l| labels.contains(l))
        .collect();
    for label in &order {
        s += &format!("| {label} |");
        for (_, rows) in &ogl {
            match rows.iter().find(|r| &r.label == label) {
                Some(r) => s += &format!(" {} | {} |", r.mass, pct(r.share)),
                None => s += " 0 | 0.0% |",
            }
        }
        s += "\n";
    }
    for (line, pick) in [("Max. OGL", f64::max as fn(f64, f64) -> f64), ("Min. OGL", f64::min)] {
        s += &format!("| {line} |");
        for &tm in t {
            let v = records.iter().filter(|r| !r.unreachable).filter_map(|r| r.medians.get(&tm).map(|m| m.ogl)).reduce(pick);
            s += &format!(" {} | |", v.map_or("NA".into(), |x| format!("{x:.3}")));
        }
        s += "\n";
    }

    s += "\n## Lucky Catch\n\n";
    if lucky.is_empty() {
        s += "No events.\n";
    } else {
        s += "| District | T | new_transfer | alternative_route | reduced_wait | cells with OGL > 0 | max OGL |\n|---|---|---|---|---|---|---|\n";
        for row in lucky {
            s += &format!("| {} |\n", row.join(" | "));
        }
    }
    Ok(s)
}

pub fn cmd_report(ctx: &StudyContext) -> Result<(), PipelineError> {
    let records = read_median_records(&ctx.layout.indices("index_median.csv"))?;
    let gini = read_csv_rows(&ctx.layout.indices("gini.csv"))?;
    let lucky = read_csv_rows(&ctx.layout.indices("lucky_catch_summary.csv"))?;
    let text = render_report(ctx, &records, &gini, &lucky)?;
    write_with(&ctx.layout.report(), |w| Ok(w.write_all(text.as_bytes())?))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u128>,
    pub warnings: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::input(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(rd) = fs::read_dir(&d) else { continue };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Digest of the effective configuration with input paths relative to
/// `base`. The output directory is left out so a rerun elsewhere matches.
pub fn config_digest(cfg: &StudyConfig, base: &Path) -> String {
    let mut c = cfg.clone();
    let fix = |p: &mut PathBuf| *p = PathBuf::from(rel(p, base));
    fix(&mut c.inputs.gtfs);
    fix(&mut c.inputs.nodes);
    fix(&mut c.inputs.edges);
    fix(&mut c.inputs.cells);
    fix(&mut c.inputs.schools);
    c.inputs.observations.values_mut().for_each(fix);
    c.output_dir = PathBuf::new();
    let text = serde_json::to_string(&c).expect("config serialises");
    hex(&Sha256::digest(text.as_bytes()))
}

pub fn input_digests(cfg: &StudyConfig, base: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut m = BTreeMap::new();
    let mut files = files_under(&cfg.inputs.gtfs);
    files.extend([cfg.inputs.nodes.clone(), cfg.inputs.edges.clone(), cfg.inputs.cells.clone(), cfg.inputs.schools.clone()]);
    files.extend(cfg.days.iter().filter_map(|d| cfg.inputs.observations.get(d).cloned()));
    for f in files {
        if f.is_file() {
            m.insert(rel(&f, base), sha256_file(&f)?);
        }
    }
    Ok(m)
}

/// Every stage in order, then a manifest. `base` is the config directory.
pub fn cmd_all(cfg: StudyConfig, base: &Path) -> Result<RunManifest, PipelineError> {
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, u128>| {
        timings.insert(name.to_string(), clock.elapsed().as_millis());
        clock = Instant::now();
    };
    let config_sha256 = config_digest(&cfg, base);
    let inputs = input_digests(&cfg, base)?;
    let ctx = StudyContext::load(cfg)?;
    let mut warnings = ctx.warnings.clone();
    lap("load", &mut timings);
    warnings.extend(cmd_build_actual(&ctx, None)?);
    lap("build_actual", &mut timings);
    warnings.extend(cmd_matrix(&ctx, None, None)?);
    lap("matrix", &mut timings);
    let (_, w) = cmd_indices(&ctx.cfg, &ctx.cells)?;
    warnings.extend(w);
    lap("indices", &mut timings);
    cmd_geojson(&ctx)?;
    lap("geojson", &mut timings);
    cmd_report(&ctx)?;
    lap("report", &mut timings);

    let root = &ctx.layout.root;
    let mut outputs = BTreeMap::new();
    for f in files_under(root) {
        if f != ctx.layout.manifest() {
            outputs.insert(rel(&f, root), sha256_file(&f)?);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let manifest = RunManifest { config_sha256, inputs, outputs, timings_ms: timings, warnings };
    write_with(&ctx.layout.manifest(), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(manifest)
}
