#ifndef THINLB_H
#define THINLB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum ThinlbStatus {
  THINLB_STATUS_OK = 0,
  THINLB_STATUS_NULL_POINTER = 1,
  THINLB_STATUS_INVALID_INPUT = 2,
  THINLB_STATUS_CAPACITY = 3,
  THINLB_STATUS_PARSE = 4,
  THINLB_STATUS_IO = 5,
  THINLB_STATUS_OUT_OF_RANGE = 6,
  THINLB_STATUS_PANIC = 7,
} ThinlbStatus;

// Per-server series of a scaled queue path.
typedef enum ThinlbSeries {
  // `X̂` (or `X̌` in the large-initial-condition regime).
  THINLB_SERIES_QUEUE = 0,
  THINLB_SERIES_LOCAL_TIME = 1,
  THINLB_SERIES_FREE = 2,
  THINLB_SERIES_MARTINGALE = 3,
  THINLB_SERIES_ROUTED_ARRIVALS = 4,
} ThinlbSeries;

// Tie-breaking rule for the drift at coincident coordinates.
typedef enum ThinlbTieRule {
  THINLB_TIE_RULE_INDEX = 0,
  THINLB_TIE_RULE_REVERSE_INDEX = 1,
  THINLB_TIE_RULE_BLOCK_AVERAGE = 2,
  THINLB_TIE_RULE_RANDOM_SHUFFLE = 3,
} ThinlbTieRule;

typedef struct ThinlbEventLog ThinlbEventLog;

// Prelimit model at a fixed scaling parameter.
typedef struct ThinlbModel ThinlbModel;

typedef struct ThinlbScaledPath ThinlbScaledPath;

typedef struct ThinlbSdePath ThinlbSdePath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the
// next call on the same thread.
const char *thinlb_last_error_message(void);

// 1-based ranks of `x[0..len]` (ties to the smaller index) into `out[0..len]`.
//
// # Safety
// `x` and `out` must point to `len` valid elements.
enum ThinlbStatus thinlb_rank_vector(const double *x, size_t len, size_t *out);

// Power-of-choice rank probabilities into `out[0..servers]`.
//
// # Safety
// `out` must point to `servers` writable elements.
enum ThinlbStatus thinlb_poc_probabilities(size_t servers,
                                           size_t ell,
                                           bool with_replacement,
                                           double *out);

// Whether `beta` is an admissible drift at state `x`; all arrays have `len` entries.
//
// # Safety
// Array arguments must point to `len` valid elements; `out` to one bool.
enum ThinlbStatus thinlb_in_drift_hull(const double *beta,
                                       const double *x,
                                       const double *b,
                                       size_t len,
                                       double tol,
                                       bool *out);

// One-dimensional Skorokhod map of the piecewise-linear path `(t, y)`.
//
// # Safety
// All arrays must point to `len` valid elements.
enum ThinlbStatus thinlb_skorokhod_map(const double *t,
                                       const double *y,
                                       size_t len,
                                       double *x_out,
                                       double *z_out);

// Build a model from the TOML body of a `[model]` table at scaling `n`.
//
// # Safety
// `toml` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum ThinlbStatus thinlb_model_new(const char *toml, uint64_t n, struct ThinlbModel **out);

// # Safety
// `model` must come from [`thinlb_model_new`] and not be used afterwards.
void thinlb_model_free(struct ThinlbModel *model);

// Number of servers.
//
// # Safety
// `model` must be a live handle.
size_t thinlb_model_servers(const struct ThinlbModel *model);

// Limit-equation data `b`, `m`, `σ`, `x0`; each output holds `servers` values.
//
// # Safety
// `model` must be live; outputs must hold `servers` elements.
enum ThinlbStatus thinlb_model_diffusion(const struct ThinlbModel *model,
                                         double *b,
                                         double *m,
                                         double *sigma,
                                         double *x0);

// Simulate the queueing system on `[0, horizon]`.
//
// # Safety
// `model` must be live and `out` writable.
enum ThinlbStatus thinlb_simulate(const struct ThinlbModel *model,
                                  double horizon,
                                  uint64_t seed,
                                  struct ThinlbEventLog **out);

// # Safety
// `log` must come from [`thinlb_simulate`] and not be used afterwards.
void thinlb_event_log_free(struct ThinlbEventLog *log);

// Number of events.
//
// # Safety
// `log` must be a live handle.
size_t thinlb_event_log_len(const struct ThinlbEventLog *log);

// Time of event `k` and the queue lengths just after it (`servers` values).
//
// # Safety
// `log` must be live; `time` writable; `queue` must hold `servers` elements.
enum ThinlbStatus thinlb_event_log_event(const struct ThinlbEventLog *log,
                                         size_t k,
                                         double *time,
                                         uint64_t *queue);

// Diffusion-scaled processes of a logged run.
//
// # Safety
// `log` and `model` must be live, `model` the one that produced `log`.
enum ThinlbStatus thinlb_scaled_path(const struct ThinlbEventLog *log,
                                     const struct ThinlbModel *model,
                                     struct ThinlbScaledPath **out);

// # Safety
// `path` must come from [`thinlb_scaled_path`] and not be used afterwards.
void thinlb_scaled_path_free(struct ThinlbScaledPath *path);

// Number of grid points.
//
// # Safety
// `path` must be a live handle.
size_t thinlb_scaled_path_len(const struct ThinlbScaledPath *path);

// Copy the time grid (`len` values).
//
// # Safety
// `path` must be live; `out` must hold `thinlb_scaled_path_len` elements.
enum ThinlbStatus thinlb_scaled_path_grid(const struct ThinlbScaledPath *path, double *out);

// Copy one per-server series (0-based `server`) sampled on the grid.
//
// # Safety
// `path` must be live; `out` must hold `thinlb_scaled_path_len` elements.
enum ThinlbStatus thinlb_scaled_path_series(const struct ThinlbScaledPath *path,
                                            enum ThinlbSeries series,
                                            size_t server,
                                            double *out);

// Euler scheme for the rank-based equation; arrays hold `dim` values.
//
// # Safety
// Array arguments must point to `dim` valid elements; `out` writable.
enum ThinlbStatus thinlb_sde_integrate(const double *b,
                                       const double *m,
                                       const double *sigma,
                                       const double *x0,
                                       size_t dim,
                                       double horizon,
                                       double dt,
                                       uint64_t seed,
                                       bool reflected,
                                       enum ThinlbTieRule tie_rule,
                                       struct ThinlbSdePath **out);

// # Safety
// `path` must come from [`thinlb_sde_integrate`] and not be used afterwards.
void thinlb_sde_path_free(struct ThinlbSdePath *path);

// Number of steps; the grid has `steps + 1` points.
//
// # Safety
// `path` must be a live handle.
size_t thinlb_sde_path_steps(const struct ThinlbSdePath *path);

// State and cumulative local time at grid point `k` (`dim` values each).
//
// # Safety
// `path` must be live; outputs must hold `dim` elements.
enum ThinlbStatus thinlb_sde_path_point(const struct ThinlbSdePath *path,
                                        size_t k,
                                        double *state,
                                        double *local_time);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THINLB_H */
