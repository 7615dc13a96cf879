//! C ABI over the transit-access engine.
//!
//! Every function returns a [`TaStatus`]; results come back through out
//! pointers. On failure the calling thread's last error message is set and
//! can be read with [`ta_last_error`]. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use transit_access::config::StudyConfig;
use transit_access::delay::{self, ObservedTripTrace};
use transit_access::gtfs::{self, StopTime, TimetableFeed};
use transit_access::indices::{self, BootstrapMode};
use transit_access::pipeline::{self, PipelineError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Unreadable or malformed input file.
    Input = 3,
    Config = 4,
    /// Writing outputs failed.
    Output = 5,
    Internal = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Parsed GTFS feed.
pub struct TaFeed {
    feed: TimetableFeed,
}

/// Loaded study configuration plus the directory its paths are relative to.
pub struct TaStudy {
    cfg: StudyConfig,
    base: PathBuf,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TaGiniResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let s = CString::new(msg.to_string().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn fail(status: TaStatus, msg: impl std::fmt::Display) -> TaStatus {
    set_error(msg);
    status
}

/// Runs `f`, mapping panics to `Panic` and clearing the error on success.
fn guard(f: impl FnOnce() -> Result<(), (TaStatus, String)>) -> TaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TaStatus::Ok
        }
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(TaStatus::Panic, "panic inside transit-access"),
    }
}

fn null(what: &str) -> (TaStatus, String) {
    (TaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: impl std::fmt::Display) -> (TaStatus, String) {
    (TaStatus::InvalidArgument, e.to_string())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (TaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (TaStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), (TaStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse a GTFS directory.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_feed_open(dir: *const c_char, out: *mut *mut TaFeed) -> TaStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let feed = gtfs::parse_feed(&dir).map_err(|e| (TaStatus::Input, e.to_string()))?;
        out.write(Box::into_raw(Box::new(TaFeed { feed })));
        Ok(())
    })
}

/// Number of trips, or of trips running on `date` (`YYYY-MM-DD`) when it is
/// not null.
///
/// # Safety
/// `feed` must come from [`ta_feed_open`]; `date` null or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ta_feed_trip_count(feed: *const TaFeed, date: *const c_char, out: *mut usize) -> TaStatus {
    guard(|| {
        let feed = feed.as_ref().ok_or_else(|| null("feed"))?;
        let n = if date.is_null() {
            feed.feed.trips.len()
        } else {
            let s = CStr::from_ptr(date).to_str().map_err(|_| invalid("date is not UTF-8"))?;
            let d: NaiveDate = s.parse().map_err(|e| invalid(format!("date {s:?}: {e}")))?;
            gtfs::active_trips(&feed.feed, d).len()
        };
        write(out, n, "out")
    })
}

/// # Safety
/// `feed` must come from [`ta_feed_open`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_feed_stop_count(feed: *const TaFeed, out: *mut usize) -> TaStatus {
    guard(|| {
        let feed = feed.as_ref().ok_or_else(|| null("feed"))?;
        write(out, feed.feed.stops.len(), "out")
    })
}

/// # Safety
/// `feed` must come from [`ta_feed_open`] and not be used afterwards. Null is
/// accepted.
#[no_mangle]
pub unsafe extern "C" fn ta_feed_free(feed: *mut TaFeed) {
    if !feed.is_null() {
        drop(Box::from_raw(feed));
    }
}

fn pipeline_status(e: &PipelineError) -> TaStatus {
    match e {
        PipelineError::Config(_) => TaStatus::Config,
        PipelineError::Input { .. } => TaStatus::Input,
        PipelineError::Output { .. } => TaStatus::Output,
        _ => TaStatus::Internal,
    }
}

/// Load and validate a study configuration.
///
/// # Safety
/// `config` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_study_open(config: *const c_char, out: *mut *mut TaStudy) -> TaStatus {
    guard(|| {
        let path = path_arg(config, "config")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = StudyConfig::load(&path).map_err(|e| (TaStatus::Config, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        out.write(Box::into_raw(Box::new(TaStudy { cfg, base })));
        Ok(())
    })
}

/// Replace the output directory of an opened study.
///
/// # Safety
/// `study` must come from [`ta_study_open`]; `dir` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ta_study_set_output_dir(study: *mut TaStudy, dir: *const c_char) -> TaStatus {
    guard(|| {
        let study = study.as_mut().ok_or_else(|| null("study"))?;
        study.cfg.output_dir = path_arg(dir, "dir")?;
        Ok(())
    })
}

/// Run every stage and write the manifest. `warnings`, when not null,
/// receives the number of warnings recorded.
///
/// # Safety
/// `study` must come from [`ta_study_open`].
#[no_mangle]
pub unsafe extern "C" fn ta_study_run_all(study: *const TaStudy, warnings: *mut usize) -> TaStatus {
    guard(|| {
        let study = study.as_ref().ok_or_else(|| null("study"))?;
        let m = pipeline::cmd_all(study.cfg.clone(), &study.base).map_err(|e| (pipeline_status(&e), e.to_string()))?;
        if !warnings.is_null() {
            warnings.write(m.warnings.len());
        }
        Ok(())
    })
}

/// # Safety
/// `study` must come from [`ta_study_open`] and not be used afterwards. Null
/// is accepted.
#[no_mangle]
pub unsafe extern "C" fn ta_study_free(study: *mut TaStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

fn opt_time(t: f64) -> Option<f64> {
    (!t.is_nan()).then_some(t)
}

/// Decay weight of round-trip time `t` (seconds) at threshold `t_max`
/// (seconds). NaN means unreachable.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_decay(t: f64, t_max: f64, out: *mut f64) -> TaStatus {
    guard(|| {
        let v = indices::decay(opt_time(t), t_max).map_err(invalid)?;
        write(out, v, "out")
    })
}

/// Sum of decay weights over `n` round-trip times (NaN for unreachable).
///
/// # Safety
/// `times` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_eco(times: *const f64, n: usize, t_max: f64, out: *mut f64) -> TaStatus {
    guard(|| {
        let times: Vec<Option<f64>> = slice(times, n, "times")?.iter().map(|&t| opt_time(t)).collect();
        let v = indices::eco(&times, t_max).map_err(invalid)?;
        write(out, v, "out")
    })
}

/// Population-weighted Gini of `n` values.
///
/// # Safety
/// `x` and `w` must point to `n` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_weighted_gini(x: *const f64, w: *const f64, n: usize, out: *mut f64) -> TaStatus {
    guard(|| {
        let g = indices::weighted_gini(slice(x, n, "x")?, slice(w, n, "w")?).map_err(invalid)?;
        write(out, g, "out")
    })
}

/// Weighted Gini with a seeded bootstrap 95% interval. `mode` 0 resamples
/// cells, 1 resamples individuals.
///
/// # Safety
/// `x` and `w` must point to `n` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ta_gini_bootstrap(
    x: *const f64,
    w: *const f64,
    n: usize,
    iterations: usize,
    seed: u64,
    mode: u32,
    out: *mut TaGiniResult,
) -> TaStatus {
    guard(|| {
        let mode = match mode {
            0 => BootstrapMode::Cells,
            1 => BootstrapMode::Population,
            m => return Err(invalid(format!("unknown bootstrap mode {m}"))),
        };
        let r = indices::gini_bootstrap(slice(x, n, "x")?, slice(w, n, "w")?, iterations, seed, mode).map_err(invalid)?;
        write(out, TaGiniResult { point: r.point, ci_low: r.ci_low, ci_high: r.ci_high }, "out")
    })
}

/// Complete one trip's departures from partial observations.
///
/// `scheduled` holds the `n` scheduled departures in stop order, `observed`
/// the observed ones with negative entries meaning not observed. The `n`
/// imputed departures are written to `out`. Observations that decrease by
/// more than `slack_s` are rejected with `InvalidArgument`.
///
/// # Safety
/// `scheduled`, `observed` and `out` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ta_impute_departures(
    scheduled: *const u32,
    observed: *const i64,
    n: usize,
    slack_s: u32,
    out: *mut u32,
) -> TaStatus {
    guard(|| {
        let sched = slice(scheduled, n, "scheduled")?;
        let obs = slice(observed, n, "observed")?;
        if out.is_null() && n > 0 {
            return Err(null("out"));
        }
        let stops: Vec<StopTime> = sched
            .iter()
            .enumerate()
            .map(|(i, &t)| StopTime { stop_id: i.to_string(), stop_sequence: i as u32 + 1, arrival: t, departure: t })
            .collect();
        let mut trace = ObservedTripTrace::default();
        for (i, &o) in obs.iter().enumerate() {
            if o >= 0 {
                let o = u32::try_from(o).map_err(|_| invalid(format!("observed[{i}] out of range")))?;
                trace.observed.insert(i as u32 + 1, o);
            }
        }
        let done = delay::impute_trace(&stops, &trace, slack_s).map_err(invalid)?;
        for (i, st) in done.iter().enumerate() {
            out.add(i).write(st.departure);
        }
        Ok(())
    })
}
