#ifndef TRANSIT_ACCESS_H
#define TRANSIT_ACCESS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TaStatus {
  TA_STATUS_OK = 0,
  TA_STATUS_NULL_POINTER = 1,
  TA_STATUS_INVALID_ARGUMENT = 2,
  // Unreadable or malformed input file.
  TA_STATUS_INPUT = 3,
  TA_STATUS_CONFIG = 4,
  // Writing outputs failed.
  TA_STATUS_OUTPUT = 5,
  TA_STATUS_INTERNAL = 6,
  // A Rust panic was caught at the boundary.
  TA_STATUS_PANIC = 7,
} TaStatus;

// Parsed GTFS feed.
typedef struct TaFeed TaFeed;

// Loaded study configuration plus the directory its paths are relative to.
typedef struct TaStudy TaStudy;

typedef struct TaGiniResult {
  double point;
  double ci_low;
  double ci_high;
} TaGiniResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *ta_last_error(void);

// Parse a GTFS directory.
//
// # Safety
// `dir` must be a nul-terminated string; `out` must be writable.
enum TaStatus ta_feed_open(const char *dir, struct TaFeed **out);

// Number of trips, or of trips running on `date` (`YYYY-MM-DD`) when it is
// not null.
//
// # Safety
// `feed` must come from [`ta_feed_open`]; `date` null or nul-terminated.
enum TaStatus ta_feed_trip_count(const struct TaFeed *feed, const char *date, size_t *out);

// # Safety
// `feed` must come from [`ta_feed_open`]; `out` must be writable.
enum TaStatus ta_feed_stop_count(const struct TaFeed *feed, size_t *out);

// # Safety
// `feed` must come from [`ta_feed_open`] and not be used afterwards. Null is
// accepted.
void ta_feed_free(struct TaFeed *feed);

// Load and validate a study configuration.
//
// # Safety
// `config` must be a nul-terminated path; `out` must be writable.
enum TaStatus ta_study_open(const char *config, struct TaStudy **out);

// Replace the output directory of an opened study.
//
// # Safety
// `study` must come from [`ta_study_open`]; `dir` must be nul-terminated.
enum TaStatus ta_study_set_output_dir(struct TaStudy *study, const char *dir);

// Run every stage and write the manifest. `warnings`, when not null,
// receives the number of warnings recorded.
//
// # Safety
// `study` must come from [`ta_study_open`].
enum TaStatus ta_study_run_all(const struct TaStudy *study, size_t *warnings);

// # Safety
// `study` must come from [`ta_study_open`] and not be used afterwards. Null
// is accepted.
void ta_study_free(struct TaStudy *study);

// Decay weight of round-trip time `t` (seconds) at threshold `t_max`
// (seconds). NaN means unreachable.
//
// # Safety
// `out` must be writable.
enum TaStatus ta_decay(double t, double t_max, double *out);

// Sum of decay weights over `n` round-trip times (NaN for unreachable).
//
// # Safety
// `times` must point to `n` doubles; `out` must be writable.
enum TaStatus ta_eco(const double *times, size_t n, double t_max, double *out);

// Population-weighted Gini of `n` values.
//
// # Safety
// `x` and `w` must point to `n` doubles each; `out` must be writable.
enum TaStatus ta_weighted_gini(const double *x, const double *w, size_t n, double *out);

// Weighted Gini with a seeded bootstrap 95% interval. `mode` 0 resamples
// cells, 1 resamples individuals.
//
// # Safety
// `x` and `w` must point to `n` doubles each; `out` must be writable.
enum TaStatus ta_gini_bootstrap(const double *x,
                                const double *w,
                                size_t n,
                                size_t iterations,
                                uint64_t seed,
                                uint32_t mode,
                                struct TaGiniResult *out);

// Complete one trip's departures from partial observations.
//
// `scheduled` holds the `n` scheduled departures in stop order, `observed`
// the observed ones with negative entries meaning not observed. The `n`
// imputed departures are written to `out`. Observations that decrease by
// more than `slack_s` are rejected with `InvalidArgument`.
//
// # Safety
// `scheduled`, `observed` and `out` must each hold `n` elements.
enum TaStatus ta_impute_departures(const uint32_t *scheduled,
                                   const int64_t *observed,
                                   size_t n,
                                   uint32_t slack_s,
                                   uint32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSIT_ACCESS_H */
