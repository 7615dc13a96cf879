//! Street network access: capped walk/cycle durations between cell
//! centroids, schools and boarding points, and public-transport desert
//! classification.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gtfs::{StopKind, TimetableFeed};

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, thiserror::Error)]
pub enum StreetError {
    #[error("missing file {0}")]
    MissingFile(std::path::PathBuf),
    #[error("{file}:{line}: {message}")]
    Row { file: String, line: u64, message: String },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
}

/// Equirectangular projection around a fixed latitude. Sub-meter error at
/// city scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub lat0: f64,
    pub lon0: f64,
    cos_lat0: f64,
}

impl LocalFrame {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        LocalFrame { lat0, lon0, cos_lat0: lat0.to_radians().cos() }
    }

    /// Frame centred on the mean of the given coordinates.
    pub fn around<'a>(points: impl IntoIterator<Item = (f64, f64)> + 'a) -> Self {
        let (mut n, mut lat, mut lon) = (0usize, 0.0, 0.0);
        for (la, lo) in points {
            n += 1;
            lat += la;
            lon += lo;
        }
        if n == 0 {
            return LocalFrame::new(0.0, 0.0);
        }
        LocalFrame::new(lat / n as f64, lon / n as f64)
    }

    pub fn to_xy(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = (lon - self.lon0).to_radians() * self.cos_lat0 * EARTH_RADIUS_M;
        let y = (lat - self.lat0).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    pub fn to_latlon(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.lat0 + (y / EARTH_RADIUS_M).to_degrees();
        let lon = self.lon0 + (x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees();
        (lat, lon)
    }

    pub fn distance_m(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (ax, ay) = self.to_xy(a.0, a.1);
        let (bx, by) = self.to_xy(b.0, b.1);
        (ax - bx).hypot(ay - by)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Walk,
    Cycle,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Walk => "walk",
            Mode::Cycle => "cycle",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    to: usize,
    length_m: f64,
    walk: bool,
    cycle: bool,
}

impl Edge {
    fn allows(&self, mode: Mode) -> bool {
        match mode {
            Mode::Walk => self.walk,
            Mode::Cycle => self.cycle,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreetNode {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Undirected street network. May be disconnected.
#[derive(Debug, Clone)]
pub struct StreetGraph {
    nodes: Vec<StreetNode>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<Edge>>,
    frame: LocalFrame,
    xy: Vec<(f64, f64)>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    bucket_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSpec {
    pub length_m: f64,
    pub walk: bool,
    pub cycle: bool,
}

impl StreetGraph {
    pub fn new(
        nodes: Vec<StreetNode>,
        edges: &[(String, String, EdgeSpec)],
    ) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(format!("duplicate node id {:?}", n.id));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (a, b, spec) in edges {
            let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) else {
                return Err(format!("edge {a}-{b} references an unknown node"));
            };
            if !(spec.length_m > 0.0 && spec.length_m.is_finite()) {
                return Err(format!("edge {a}-{b} has non-positive length"));
            }
            adjacency[ia].push(Edge { to: ib, length_m: spec.length_m, walk: spec.walk, cycle: spec.cycle });
            adjacency[ib].push(Edge { to: ia, length_m: spec.length_m, walk: spec.walk, cycle: spec.cycle });
        }
        let frame = LocalFrame::around(nodes.iter().map(|n| (n.lat, n.lon)));
        let xy: Vec<_> = nodes.iter().map(|n| frame.to_xy(n.lat, n.lon)).collect();
        let mut g = StreetGraph {
            nodes,
            index,
            adjacency,
            frame,
            xy,
            buckets: HashMap::new(),
            bucket_m: 250.0,
        };
        g.rebuild_buckets();
        Ok(g)
    }

    fn rebuild_buckets(&mut self) {
        self.buckets.clear();
        for (i, &(x, y)) in self.xy.iter().enumerate() {
            if self.adjacency[i].is_empty() {
                continue;
            }
            let key = ((x / self.bucket_m).floor() as i64, (y / self.bucket_m).floor() as i64);
            self.buckets.entry(key).or_default().push(i);
        }
    }

    /// Load `nodes.csv` (node_id,lat,lon) and `edges.csv`
    /// (from,to,length_m,walk,cycle).
    pub fn load(nodes_path: &Path, edges_path: &Path) -> Result<Self, StreetError> {
        #[derive(Deserialize)]
        struct NodeRow {
            node_id: String,
            lat: f64,
            lon: f64,
        }
        #[derive(Deserialize)]
        struct EdgeRow {
            from: String,
            to: String,
            length_m: f64,
            walk: u8,
            cycle: u8,
        }
        let nodes: Vec<NodeRow> = read_rows(nodes_path)?;
        let edges: Vec<EdgeRow> = read_rows(edges_path)?;
        let file = file_name(edges_path);
        let nodes = nodes.into_iter().map(|n| StreetNode { id: n.node_id, lat: n.lat, lon: n.lon }).collect();
        let edges: Vec<_> = edges
            .into_iter()
            .map(|e| (e.from, e.to, EdgeSpec { length_m: e.length_m, walk: e.walk != 0, cycle: e.cycle != 0 }))
            .collect();
        StreetGraph::new(nodes, &edges).map_err(|message| StreetError::Row { file, line: 0, message })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_id(&self, idx: usize) -> &str {
        &self.nodes[idx].id
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Nearest node with at least one edge, if within `max_m`.
    pub fn snap(&self, lat: f64, lon: f64, max_m: f64) -> Option<(usize, f64)> {
        let (x, y) = self.frame.to_xy(lat, lon);
        let reach = (max_m / self.bucket_m).ceil() as i64;
        let (bx, by) = ((x / self.bucket_m).floor() as i64, (y / self.bucket_m).floor() as i64);
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                let Some(cands) = self.buckets.get(&(bx + dx, by + dy)) else { continue };
                for &i in cands {
                    let (nx, ny) = self.xy[i];
                    let d = (nx - x).hypot(ny - y);
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && i < bi),
                    };
                    if d <= max_m && better {
                        best = Some((i, d));
                    }
                }
            }
        }
        best
    }

    /// Network distances (meters) from `source`, starting at `offset_m`,
    /// settled up to `budget_m`.
    pub fn distances_within(&self, source: usize, offset_m: f64, budget_m: f64, mode: Mode) -> HashMap<usize, f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        let mut settled = HashMap::new();
        let mut best: HashMap<usize, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        if offset_m > budget_m {
            return settled;
        }
        best.insert(source, offset_m);
        heap.push(Item(offset_m, source));
        while let Some(Item(d, u)) = heap.pop() {
            if settled.contains_key(&u) {
                continue;
            }
            settled.insert(u, d);
            for e in self.adjacency[u].iter().filter(|e| e.allows(mode)) {
                let nd = d + e.length_m;
                if nd > budget_m || settled.contains_key(&e.to) {
                    continue;
                }
                if best.get(&e.to).is_none_or(|&b| nd < b) {
                    best.insert(e.to, nd);
                    heap.push(Item(nd, e.to));
                }
            }
        }
        settled
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

pub(crate) fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StreetError> {
    if !path.is_file() {
        return Err(StreetError::MissingFile(path.to_path_buf()));
    }
    let file = file_name(path);
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| StreetError::Csv { file: file.clone(), source })?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.map_err(|source| StreetError::Csv { file: file.clone(), source })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteRole {
    CellCentroid,
    School,
    BusStop,
    RailStation,
}

impl From<StopKind> for SiteRole {
    fn from(k: StopKind) -> Self {
        match k {
            StopKind::BusStop => SiteRole::BusStop,
            StopKind::RailStation => SiteRole::RailStation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub node: usize,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub role: SiteRole,
    pub lat: f64,
    pub lon: f64,
    /// `None` when no node lies within the snapping radius.
    pub snap: Option<Snap>,
}

impl Site {
    pub fn new(graph: &StreetGraph, id: impl Into<String>, role: SiteRole, lat: f64, lon: f64, max_snap_m: f64) -> Self {
        let id = id.into();
        let snap = graph.snap(lat, lon, max_snap_m).map(|(node, distance_m)| Snap { node, distance_m });
        if snap.is_none() {
            log::warn!("site {id} has no street node within {max_snap_m} m");
        }
        Site { id, role, lat, lon, snap }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Cell {
    pub cell_id: String,
    pub lat: f64,
    pub lon: f64,
    pub population_u15: f64,
    pub district: String,
    pub area: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct School {
    pub school_id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

pub fn load_cells(path: &Path) -> Result<Vec<Cell>, StreetError> {
    let mut cells: Vec<Cell> = read_rows(path)?;
    cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(cells)
}

pub fn load_schools(path: &Path) -> Result<Vec<School>, StreetError> {
    let mut schools: Vec<School> = read_rows(path)?;
    schools.sort_by(|a, b| a.school_id.cmp(&b.school_id));
    Ok(schools)
}

/// Metres travelled at `speed_kmh`, in whole seconds rounded up.
pub fn travel_seconds(meters: f64, speed_kmh: f64) -> u32 {
    let exact = meters * 3600.0 / (speed_kmh * 1000.0);
    (exact - 1e-9).ceil().max(0.0) as u32
}

/// Durations from `origin` to each reachable target within `cap_s`, via the
/// network plus straight-line snap legs at the same speed.
pub fn shortest_durations(
    graph: &StreetGraph,
    origin: &Site,
    targets: &[&Site],
    mode: Mode,
    speed_kmh: f64,
    cap_s: u32,
) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    let Some(o) = origin.snap else {
        log::warn!("origin {} is unsnappable; no durations", origin.id);
        return out;
    };
    let budget_m = cap_s as f64 * speed_kmh * 1000.0 / 3600.0 + 1e-6;
    let dist = graph.distances_within(o.node, o.distance_m, budget_m, mode);
    for t in targets {
        let Some(ts) = t.snap else { continue };
        if let Some(d) = dist.get(&ts.node) {
            let secs = travel_seconds(d + ts.distance_m, speed_kmh);
            if secs <= cap_s {
                out.insert(t.id.clone(), secs);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccessParams {
    pub walk_speed_kmh: f64,
    pub cycle_speed_kmh: f64,
    pub walk_bus_cap_s: u32,
    pub walk_rail_cap_s: u32,
    pub cycle_rail_cap_s: u32,
    pub walk_only_cap_s: u32,
    pub transfer_walk_cap_s: u32,
    pub max_snap_m: f64,
}

impl Default for AccessParams {
    fn default() -> Self {
        AccessParams {
            walk_speed_kmh: 4.0,
            cycle_speed_kmh: 12.0,
            walk_bus_cap_s: 450,
            walk_rail_cap_s: 900,
            cycle_rail_cap_s: 900,
            walk_only_cap_s: 900,
            transfer_walk_cap_s: 120,
            max_snap_m: 100.0,
        }
    }
}

impl AccessParams {
    pub fn stop_cap(&self, mode: Mode, role: SiteRole) -> Option<u32> {
        match (mode, role) {
            (Mode::Walk, SiteRole::BusStop) => Some(self.walk_bus_cap_s),
            (Mode::Walk, SiteRole::RailStation) => Some(self.walk_rail_cap_s),
            (Mode::Cycle, SiteRole::RailStation) => Some(self.cycle_rail_cap_s),
            _ => None,
        }
    }

    pub fn speed(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Walk => self.walk_speed_kmh,
            Mode::Cycle => self.cycle_speed_kmh,
        }
    }
}

/// Capped durations for one mode. Entries are stored in the direction they
/// were computed (origin side first); lookups are symmetric.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccessTable {
    pub mode: Option<Mode>,
    pub entries: BTreeMap<(String, String), u32>,
}

impl AccessTable {
    pub fn new(mode: Mode) -> Self {
        AccessTable { mode: Some(mode), entries: BTreeMap::new() }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<u32> {
        self.entries
            .get(&(a.to_string(), b.to_string()))
            .or_else(|| self.entries.get(&(b.to_string(), a.to_string())))
            .copied()
    }

    pub fn from_site<'a>(&'a self, a: &'a str) -> impl Iterator<Item = (&'a str, u32)> + 'a {
        self.entries
            .range((a.to_string(), String::new())..)
            .take_while(move |((f, _), _)| f == a)
            .map(|((_, t), s)| (t.as_str(), *s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccessTables {
    /// cell↔stop, school↔stop, cell↔school (walk-only trips).
    pub walk: AccessTable,
    /// cell↔rail station only.
    pub cycle: AccessTable,
    /// stop↔stop walking transfers between distinct stops.
    pub transfers: AccessTable,
}

impl AccessTables {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["mode", "from", "to", "seconds"])?;
        for (table, label) in [(&self.walk, "walk"), (&self.cycle, "cycle"), (&self.transfers, "transfer_walk")] {
            for ((from, to), s) in &table.entries {
                w.write_record([label, from, to, &s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Boarding points of a feed as sites.
pub fn stop_sites(graph: &StreetGraph, feed: &TimetableFeed, max_snap_m: f64) -> Vec<Site> {
    feed.stops
        .values()
        .map(|s| Site::new(graph, s.id.clone(), s.kind.into(), s.lat, s.lon, max_snap_m))
        .collect()
}

fn capped_to_stops(
    graph: &StreetGraph,
    origin: &Site,
    stops: &[&Site],
    mode: Mode,
    params: &AccessParams,
) -> Vec<((String, String), u32)> {
    let relevant: Vec<&Site> = stops.iter().copied().filter(|s| params.stop_cap(mode, s.role).is_some()).collect();
    let max_cap = relevant.iter().filter_map(|s| params.stop_cap(mode, s.role)).max().unwrap_or(0);
    if max_cap == 0 {
        return Vec::new();
    }
    let roles: HashMap<&str, SiteRole> = relevant.iter().map(|s| (s.id.as_str(), s.role)).collect();
    shortest_durations(graph, origin, &relevant, mode, params.speed(mode), max_cap)
        .into_iter()
        .filter(|(id, secs)| params.stop_cap(mode, roles[id.as_str()]).is_some_and(|c| *secs <= c))
        .map(|(id, secs)| ((origin.id.clone(), id), secs))
        .collect()
}

/// All access/egress tables under the configured caps. Cycle legs only reach
/// rail stations (no bicycle parking at bus stops).
pub fn build_access_tables(
    graph: &StreetGraph,
    cells: &[Site],
    schools: &[Site],
    stops: &[Site],
    params: &AccessParams,
) -> AccessTables {
    let stop_refs: Vec<&Site> = stops.iter().collect();
    let school_refs: Vec<&Site> = schools.iter().collect();

    let walk_cells: Vec<_> = cells
        .par_iter()
        .flat_map_iter(|c| {
            let mut v = capped_to_stops(graph, c, &stop_refs, Mode::Walk, params);
            v.extend(
                shortest_durations(graph, c, &school_refs, Mode::Walk, params.walk_speed_kmh, params.walk_only_cap_s)
                    .into_iter()
                    .map(|(s, secs)| ((c.id.clone(), s), secs)),
            );
            v
        })
        .collect();
    let walk_schools: Vec<_> = schools
        .par_iter()
        .flat_map_iter(|s| capped_to_stops(graph, s, &stop_refs, Mode::Walk, params))
        .collect();
    let cycle: Vec<_> = cells
        .par_iter()
        .flat_map_iter(|c| capped_to_stops(graph, c, &stop_refs, Mode::Cycle, params))
        .collect();
    let transfers: Vec<_> = stops
        .par_iter()
        .flat_map_iter(|s| {
            shortest_durations(graph, s, &stop_refs, Mode::Walk, params.walk_speed_kmh, params.transfer_walk_cap_s)
                .into_iter()
                .filter(|(to, _)| *to != s.id)
                .map(|(to, secs)| ((s.id.clone(), to), secs))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut tables = AccessTables {
        walk: AccessTable::new(Mode::Walk),
        cycle: AccessTable::new(Mode::Cycle),
        transfers: AccessTable::new(Mode::Walk),
    };
    tables.walk.entries.extend(walk_cells);
    tables.walk.entries.extend(walk_schools);
    tables.cycle.entries.extend(cycle);
    tables.transfers.entries.extend(transfers);
    tables
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesertMetric {
    #[default]
    Radius,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesertRadii {
    pub bus_m: f64,
    pub rail_m: f64,
}

impl Default for DesertRadii {
    fn default() -> Self {
        DesertRadii { bus_m: 500.0, rail_m: 1000.0 }
    }
}

/// A cell is a public-transport desert when it lies beyond the bus radius of
/// every bus stop and beyond the rail radius of every station. Distances on
/// the radius are served.
pub fn classify_pt_desert(
    frame: &LocalFrame,
    cell: (f64, f64),
    bus_stops: &[(f64, f64)],
    stations: &[(f64, f64)],
    radii: &DesertRadii,
) -> bool {
    let nearest = |pts: &[(f64, f64)]| pts.iter().map(|&p| frame.distance_m(cell, p)).fold(f64::INFINITY, f64::min);
    // projection round-off must not push an on-radius stop outside
    const EPS_M: f64 = 1e-6;
    nearest(bus_stops) > radii.bus_m + EPS_M && nearest(stations) > radii.rail_m + EPS_M
}

/// Network-distance variant of [`classify_pt_desert`], walking the street
/// graph (snap legs included). Unsnappable cells count as deserts.
pub fn classify_pt_desert_network(graph: &StreetGraph, cell: &Site, stops: &[Site], radii: &DesertRadii) -> bool {
    let Some(o) = cell.snap else { return true };
    let budget = radii.bus_m.max(radii.rail_m);
    let dist = graph.distances_within(o.node, o.distance_m, budget, Mode::Walk);
    !stops.iter().any(|s| {
        let radius = match s.role {
            SiteRole::BusStop => radii.bus_m,
            SiteRole::RailStation => radii.rail_m,
            _ => return false,
        };
        s.snap
            .and_then(|sn| dist.get(&sn.node).map(|d| d + sn.distance_m))
            .is_some_and(|d| d <= radius)
    })
}
