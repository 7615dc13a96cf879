//! Cumulative-opportunity indices (ECO), their gain/loss under actual
//! operations (OGL, TOGL), district percentiles, binned distributions and a
//! population-weighted Gini with bootstrap intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::router::RoundTripTime;
use crate::stats::{median, nearest_rank_sorted};
use crate::street::Cell;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndexError {
    #[error("negative travel time {0}")]
    NegativeTime(f64),
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("negative value {0}")]
    NegativeValue(f64),
    #[error("total weight must be positive")]
    ZeroWeight,
    #[error("values and weights differ in length")]
    LengthMismatch,
    #[error("bins {0} and {1} overlap")]
    OverlappingBins(String, String),
    #[error("bootstrap needs at least two cells")]
    TooFewCells,
}

/// Linear decay of a round-trip time `t` against threshold `T` (seconds).
/// `None` is UNREACHABLE.
pub fn decay(t: Option<f64>, threshold: f64) -> Result<f64, IndexError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(IndexError::BadThreshold(threshold));
    }
    let Some(t) = t else { return Ok(0.0) };
    if t < 0.0 || t.is_nan() {
        return Err(IndexError::NegativeTime(t));
    }
    Ok(if t <= threshold {
        1.0
    } else if t <= 2.0 * threshold {
        2.0 - t / threshold
    } else {
        0.0
    })
}

/// Equivalent number of reachable destinations.
pub fn eco(times: &[Option<f64>], threshold: f64) -> Result<f64, IndexError> {
    times.iter().try_fold(0.0, |acc, &t| Ok(acc + decay(t, threshold)?))
}

pub fn ogl(eco_actual: f64, eco_scheduled: f64) -> f64 {
    eco_actual - eco_scheduled
}

pub fn togl(ogl: f64, population: f64) -> f64 {
    population * ogl
}

pub fn median_over_days(values: &[f64]) -> Option<f64> {
    median(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PercentileDirection {
    /// Largest level attained (ECO ≥ v) by at least the share q.
    #[default]
    Attains,
    /// Smallest level at or below which the share q falls.
    Below,
}

impl FromStr for PercentileDirection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "attains" => Ok(PercentileDirection::Attains),
            "below" => Ok(PercentileDirection::Below),
            other => Err(format!("unknown percentile direction {other:?}")),
        }
    }
}

/// Population-weighted percentile of ECO within one district. `None` when
/// the district is empty or has no population.
pub fn district_percentile(cells: &[(f64, f64)], q: f64, direction: PercentileDirection) -> Option<f64> {
    let total: f64 = cells.iter().map(|c| c.1).sum();
    if cells.is_empty() || total.is_nan() || total <= 0.0 {
        return None;
    }
    // merge ties on ECO
    let mut levels: BTreeMap<OrdF64, f64> = BTreeMap::new();
    for &(v, p) in cells {
        *levels.entry(OrdF64(v)).or_default() += p;
    }
    const EPS: f64 = 1e-12;
    match direction {
        PercentileDirection::Attains => {
            let mut at_least = 0.0;
            for (v, p) in levels.iter().rev() {
                at_least += p;
                if at_least / total >= q - EPS {
                    return Some(v.0);
                }
            }
            levels.keys().next().map(|v| v.0)
        }
        PercentileDirection::Below => {
            let mut at_most = 0.0;
            for (v, p) in &levels {
                at_most += p;
                if at_most / total >= q - EPS {
                    return Some(v.0);
                }
            }
            levels.keys().next_back().map(|v| v.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Interval with open or closed ends; infinite ends are always open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Bin {
    pub fn new(label: &str, lo: f64, lo_closed: bool, hi: f64, hi_closed: bool) -> Self {
        Bin { label: label.into(), lo, hi, lo_closed, hi_closed }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    fn overlaps(&self, other: &Bin) -> bool {
        // lower end of the intersection vs its upper end
        let (lo, lo_closed) = match self.lo.total_cmp(&other.lo) {
            std::cmp::Ordering::Greater => (self.lo, self.lo_closed),
            std::cmp::Ordering::Less => (other.lo, other.lo_closed),
            std::cmp::Ordering::Equal => (self.lo, self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match self.hi.total_cmp(&other.hi) {
            std::cmp::Ordering::Less => (self.hi, self.hi_closed),
            std::cmp::Ordering::Greater => (other.hi, other.hi_closed),
            std::cmp::Ordering::Equal => (self.hi, self.hi_closed && other.hi_closed),
        };
        lo < hi || (lo == hi && lo_closed && hi_closed)
    }
}

pub fn eco_bins() -> Vec<Bin> {
    vec![
        Bin::new("[7,9]", 7.0, true, 9.0, true),
        Bin::new("[5,7)", 5.0, true, 7.0, false),
        Bin::new("[2,5)", 2.0, true, 5.0, false),
        Bin::new("[1,2)", 1.0, true, 2.0, false),
        Bin::new("[0.5,1)", 0.5, true, 1.0, false),
        Bin::new("[0,0.5)", 0.0, true, 0.5, false),
    ]
}

pub fn ogl_bins() -> Vec<Bin> {
    vec![
        Bin::new("(0,1)", 0.0, false, 1.0, false),
        Bin::new("0", 0.0, true, 0.0, true),
        Bin::new("[-1,0)", -1.0, true, 0.0, false),
        Bin::new("[-3,-1)", -3.0, true, -1.0, false),
        // the published table closes both neighbours at -3; -3 itself goes
        // to [-3,-1) here so the bins partition the line
        Bin::new("(-inf,-3)", f64::NEG_INFINITY, false, -3.0, false),
    ]
}

pub fn check_bins(bins: &[Bin]) -> Result<(), IndexError> {
    for (i, a) in bins.iter().enumerate() {
        for b in &bins[i + 1..] {
            if a.overlaps(b) {
                return Err(IndexError::OverlappingBins(a.label.clone(), b.label.clone()));
            }
        }
    }
    Ok(())
}

pub const UNREACHABLE_ROW: &str = "Unreachable";
pub const OTHER_ROW: &str = "Other";

#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub label: String,
    pub mass: f64,
    pub share: f64,
}

/// Mass per bin. Values are `(value, weight)`; `None` values go to the
/// Unreachable row, values outside every bin to an Other row. Both rows
/// appear only when non-empty.
pub fn bin_population(values: &[(Option<f64>, f64)], bins: &[Bin]) -> Result<Vec<BinRow>, IndexError> {
    check_bins(bins)?;
    let mut mass = vec![0.0; bins.len()];
    let (mut unreachable, mut other) = (0.0, 0.0);
    let (mut any_unreachable, mut any_other) = (false, false);
    for &(v, w) in values {
        match v {
            None => {
                unreachable += w;
                any_unreachable = true;
            }
            Some(x) => match bins.iter().position(|b| b.contains(x)) {
                Some(i) => mass[i] += w,
                None => {
                    other += w;
                    any_other = true;
                }
            },
        }
    }
    let mut rows: Vec<(String, f64)> = bins.iter().map(|b| b.label.clone()).zip(mass).collect();
    if any_other {
        rows.push((OTHER_ROW.into(), other));
    }
    if any_unreachable {
        rows.push((UNREACHABLE_ROW.into(), unreachable));
    }
    let total: f64 = rows.iter().map(|r| r.1).sum();
    Ok(rows
        .into_iter()
        .map(|(label, m)| BinRow { label, mass: m, share: if total > 0.0 { m / total } else { 0.0 } })
        .collect())
}

/// Population-weighted Gini, `O(n log n)`. Zero when the weighted mean is 0.
pub fn weighted_gini(x: &[f64], w: &[f64]) -> Result<f64, IndexError> {
    if x.len() != w.len() {
        return Err(IndexError::LengthMismatch);
    }
    if let Some(&bad) = w.iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(IndexError::NegativeWeight(bad));
    }
    if let Some(&bad) = x.iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(IndexError::NegativeValue(bad));
    }
    let total_w: f64 = w.iter().sum();
    if total_w.is_nan() || total_w <= 0.0 {
        return Err(IndexError::ZeroWeight);
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let (mut w_before, mut wx_before, mut num) = (0.0, 0.0, 0.0);
    for &i in &order {
        num += w[i] * (x[i] * w_before - wx_before);
        w_before += w[i];
        wx_before += w[i] * x[i];
    }
    if wx_before == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (total_w * wx_before))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMode {
    /// Resample cells uniformly, each keeping its weight.
    #[default]
    Cells,
    /// Resample cells proportionally to weight, with unit weights.
    Population,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GiniResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub iterations: usize,
    pub seed: u64,
}

pub fn gini_bootstrap(x: &[f64], w: &[f64], iterations: usize, seed: u64, mode: BootstrapMode) -> Result<GiniResult, IndexError> {
    let point = weighted_gini(x, w)?;
    let n = x.len();
    if n < 2 {
        return Err(IndexError::TooFewCells);
    }
    let picker = match mode {
        BootstrapMode::Cells => None,
        BootstrapMode::Population => Some(WeightedIndex::new(w).map_err(|_| IndexError::ZeroWeight)?),
    };
    let mut reps: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut xs = Vec::with_capacity(n);
            let mut ws = Vec::with_capacity(n);
            for _ in 0..n {
                match &picker {
                    None => {
                        let i = rng.random_range(0..n);
                        xs.push(x[i]);
                        ws.push(w[i]);
                    }
                    Some(p) => {
                        xs.push(x[p.sample(&mut rng)]);
                        ws.push(1.0);
                    }
                }
            }
            // a replicate of all-zero weights cannot be scored
            weighted_gini(&xs, &ws).unwrap_or(0.0)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    Ok(GiniResult {
        point,
        ci_low: nearest_rank_sorted(&reps, 0.025).unwrap_or(point),
        ci_high: nearest_rank_sorted(&reps, 0.975).unwrap_or(point),
        iterations,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayIndex {
    pub eco_sched: f64,
    pub eco_actual: f64,
    pub ogl: f64,
    pub togl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAccessRecord {
    pub cell_id: String,
    pub population: f64,
    pub district: String,
    pub area: String,
    /// Keyed by (threshold minutes, day).
    pub per_day: BTreeMap<(u32, NaiveDate), DayIndex>,
    /// Keyed by threshold minutes; each column is its own median over days.
    pub medians: BTreeMap<u32, DayIndex>,
    /// No destination reachable in any variant on any day.
    pub unreachable: bool,
}

type MatrixByDay = BTreeMap<NaiveDate, Vec<RoundTripTime>>;

fn times_by_cell(rows: &[RoundTripTime]) -> BTreeMap<&str, Vec<Option<f64>>> {
    let mut m: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for r in rows {
        m.entry(r.cell_id.as_str()).or_default().push(r.t_ik);
    }
    m
}

/// Per-cell indices from scheduled and actual matrices keyed by day. Days
/// missing from either side are skipped with a warning.
pub fn compute_records(cells: &[Cell], sched: &MatrixByDay, actual: &MatrixByDay, thresholds_min: &[u32]) -> Vec<CellAccessRecord> {
    let days: BTreeSet<NaiveDate> = sched.keys().filter(|d| actual.contains_key(d)).copied().collect();
    for d in sched.keys().chain(actual.keys()) {
        if !days.contains(d) {
            log::warn!("day {d} lacks a scheduled or actual matrix; skipped");
        }
    }
    let per_day: BTreeMap<NaiveDate, _> = days.iter().map(|d| (*d, (times_by_cell(&sched[d]), times_by_cell(&actual[d])))).collect();
    cells
        .iter()
        .map(|c| {
            let mut rec = CellAccessRecord {
                cell_id: c.cell_id.clone(),
                population: c.population_u15,
                district: c.district.clone(),
                area: c.area.clone(),
                per_day: BTreeMap::new(),
                medians: BTreeMap::new(),
                unreachable: true,
            };
            for (day, (s, a)) in &per_day {
                let ts = s.get(c.cell_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                let ta = a.get(c.cell_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                if ts.iter().chain(ta).any(Option::is_some) {
                    rec.unreachable = false;
                }
                for &tm in thresholds_min {
                    let t = tm as f64 * 60.0;
                    let es = eco(ts, t).expect("matrix times are non-negative");
                    let ea = eco(ta, t).expect("matrix times are non-negative");
                    let o = ogl(ea, es);
                    rec.per_day.insert((tm, *day), DayIndex { eco_sched: es, eco_actual: ea, ogl: o, togl: togl(o, c.population_u15) });
                }
            }
            for &tm in thresholds_min {
                let col = |f: fn(&DayIndex) -> f64| -> f64 {
                    let v: Vec<f64> = rec.per_day.range((tm, NaiveDate::MIN)..=(tm, NaiveDate::MAX)).map(|(_, d)| f(d)).collect();
                    median_over_days(&v).unwrap_or(0.0)
                };
                let m = DayIndex { eco_sched: col(|d| d.eco_sched), eco_actual: col(|d| d.eco_actual), ogl: col(|d| d.ogl), togl: col(|d| d.togl) };
                rec.medians.insert(tm, m);
            }
            rec
        })
        .collect()
}

pub fn write_index_csv<W: Write>(records: &[CellAccessRecord], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["cell_id", "district", "area", "population", "threshold_min", "day", "eco_sched", "eco_actual", "ogl", "togl"])?;
    for r in records {
        for ((tm, day), d) in &r.per_day {
            w.write_record([
                r.cell_id.as_str(),
                &r.district,
                &r.area,
                &r.population.to_string(),
                &tm.to_string(),
                &day.to_string(),
                &d.eco_sched.to_string(),
                &d.eco_actual.to_string(),
                &d.ogl.to_string(),
                &d.togl.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_median_csv<W: Write>(records: &[CellAccessRecord], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["cell_id", "district", "area", "population", "threshold_min", "eco_sched", "eco_actual", "ogl", "togl"])?;
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
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictRow {
    pub district: String,
    pub threshold_min: u32,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
    pub population: f64,
}

/// District p50/p75 of the scheduled five-day median ECO.
pub fn district_summary(records: &[CellAccessRecord], thresholds_min: &[u32], direction: PercentileDirection) -> Vec<DistrictRow> {
    let mut by: BTreeMap<&str, Vec<&CellAccessRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.district.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (district, rs) in by {
        for &tm in thresholds_min {
            let cells: Vec<(f64, f64)> = rs.iter().filter_map(|r| r.medians.get(&tm).map(|m| (m.eco_sched, r.population))).collect();
            out.push(DistrictRow {
                district: district.to_string(),
                threshold_min: tm,
                p50: district_percentile(&cells, 0.50, direction),
                p75: district_percentile(&cells, 0.75, direction),
                population: rs.iter().map(|r| r.population).sum(),
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_district_csv<W: Write>(rows: &[DistrictRow], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["district", "threshold_min", "p50_eco", "p75_eco", "population"])?;
    for r in rows {
        w.write_record([r.district.as_str(), &r.threshold_min.to_string(), &opt(r.p50), &opt(r.p75), &r.population.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GiniRow {
    pub variant: String,
    pub threshold_min: u32,
    pub result: GiniResult,
}

/// Gini of five-day median ECO per variant and threshold.
pub fn gini_table(records: &[CellAccessRecord], thresholds_min: &[u32], iterations: usize, seed: u64, mode: BootstrapMode) -> Result<Vec<GiniRow>, IndexError> {
    let mut rows = Vec::new();
    for (variant, pick) in [("scheduled", (|d: &DayIndex| d.eco_sched) as fn(&DayIndex) -> f64), ("actual", |d: &DayIndex| d.eco_actual)] {
        for &tm in thresholds_min {
            let (x, w): (Vec<f64>, Vec<f64>) = records.iter().filter_map(|r| r.medians.get(&tm).map(|m| (pick(m), r.population))).unzip();
            let result = gini_bootstrap(&x, &w, iterations, seed, mode)?;
            rows.push(GiniRow { variant: variant.into(), threshold_min: tm, result });
        }
    }
    Ok(rows)
}

pub fn write_gini_csv<W: Write>(rows: &[GiniRow], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["variant", "threshold_min", "gini", "ci_low", "ci_high", "seed"])?;
    for r in rows {
        w.write_record([
            r.variant.as_str(),
            &r.threshold_min.to_string(),
            &r.result.point.to_string(),
            &r.result.ci_low.to_string(),
            &r.result.ci_high.to_string(),
            &r.result.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scheduled ECO by population (median over days) per threshold.
pub fn eco_distribution(records: &[CellAccessRecord], thresholds_min: &[u32], bins: &[Bin]) -> Result<Vec<(u32, Vec<BinRow>)>, IndexError> {
    thresholds_min
        .iter()
        .map(|&tm| {
            let vals: Vec<_> = records.iter().filter_map(|r| r.medians.get(&tm).map(|m| (Some(m.eco_sched), r.population))).collect();
            Ok((tm, bin_population(&vals, bins)?))
        })
        .collect()
}

/// OGL (median over days) by cell count per threshold; cells with no
/// reachable destination fall in the Unreachable row.
pub fn ogl_distribution(records: &[CellAccessRecord], thresholds_min: &[u32], bins: &[Bin]) -> Result<Vec<(u32, Vec<BinRow>)>, IndexError> {
    thresholds_min
        .iter()
        .map(|&tm| {
            let vals: Vec<_> = records
                .iter()
                .filter_map(|r| r.medians.get(&tm).map(|m| (if r.unreachable { None } else { Some(m.ogl) }, 1.0)))
                .collect();
            Ok((tm, bin_population(&vals, bins)?))
        })
        .collect()
}

pub fn write_bins_csv<W: Write>(tables: &[(u32, Vec<BinRow>)], mass_label: &str, w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["threshold_min", "bin", mass_label, "share"])?;
    for (tm, rows) in tables {
        for r in rows {
            w.write_record([tm.to_string(), r.label.clone(), r.mass.to_string(), r.share.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
