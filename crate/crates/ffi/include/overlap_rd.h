#ifndef OVERLAP_RD_H
#define OVERLAP_RD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RD_STATUS_OK = 0,
  RD_STATUS_NULL_POINTER = 1,
  RD_STATUS_INVALID_UTF8 = 2,
  RD_STATUS_PARSE = 3,
  RD_STATUS_MODEL = 4,
  RD_STATUS_SOLVER = 5,
  RD_STATUS_CHECKER = 6,
  RD_STATUS_ENERGY = 7,
  RD_STATUS_OUT_OF_RANGE = 8,
  RD_STATUS_BUFFER_TOO_SMALL = 9,
  RD_STATUS_PANIC = 10,
} RdStatus;

/**
 * A parsed model together with its run and checker settings.
 */
typedef struct RdModel RdModel;

typedef struct RdReport RdReport;

typedef struct RdTrajectory RdTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" if none). The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rd_last_error(void);

/**
 * Parses config text (the `overlap-rd` file format).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
RdStatus rd_model_from_config(const char *text, RdModel **out);

/**
 * Built-in example `ex1`, `ex2` or `ex3` with default parameters.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
RdStatus rd_model_from_builtin(const char *name, RdModel **out);

/**
 * # Safety
 * `model` must come from an `rd_model_*` constructor or be null.
 */
void rd_model_free(RdModel *model);

/**
 * Number of species, 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t rd_model_species(const RdModel *model);

/**
 * Spatial dimension, 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t rd_model_dimension(const RdModel *model);

/**
 * Runs with the model's `solve` settings (defaults when absent).
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
RdStatus rd_run(const RdModel *model, RdTrajectory **out);

/**
 * Runs with explicit step, horizon, cells per axis and ε.
 *
 * # Safety
 * `model` must be a live handle, `cells` must point to `n_cells` values and
 * `out` must be writable.
 */
RdStatus rd_run_with(const RdModel *model,
                     double dt,
                     double t_end,
                     const size_t *cells,
                     size_t n_cells,
                     double epsilon,
                     RdTrajectory **out);

/**
 * # Safety
 * `traj` must come from `rd_run*` or be null.
 */
void rd_trajectory_free(RdTrajectory *traj);

/**
 * Number of ledger rows (steps + 1).
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
size_t rd_trajectory_rows(const RdTrajectory *traj);

/**
 * Time, weighted mass, envelope and global minimum of ledger row `row`.
 * Any output pointer may be null.
 *
 * # Safety
 * `traj` must be a live handle; non-null outputs must be writable.
 */
RdStatus rd_trajectory_row(const RdTrajectory *traj,
                           size_t row,
                           double *t,
                           double *weighted_mass,
                           double *envelope,
                           double *global_min);

/**
 * Copies the final cell values of species `species` (0-based). `written`
 * receives the number of cells; with a null or short buffer the call
 * reports `BufferTooSmall` and only sets `written`.
 *
 * # Safety
 * `traj` must be a live handle; `buf` must hold `len` values when non-null.
 */
RdStatus rd_trajectory_final_field(const RdTrajectory *traj,
                                   size_t species,
                                   double *buf,
                                   size_t len,
                                   size_t *written);

/**
 * Ledger as CSV; release with [`rd_string_free`]. Null for a null handle.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
char *rd_trajectory_ledger_csv(const RdTrajectory *traj);

/**
 * Certifies the structural hypotheses with the model's checker settings.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
RdStatus rd_check(const RdModel *model, RdReport **out);

/**
 * 1 when every hypothesis is certified, 0 otherwise (or for null).
 *
 * # Safety
 * `report` must be a live handle or null.
 */
int32_t rd_report_hypotheses_met(const RdReport *report);

/**
 * Fitted mass-control witness: `b` receives m weights when non-null.
 *
 * # Safety
 * `report` must be a live handle; `b` must hold `len` values when non-null.
 */
RdStatus rd_report_mass_control(const RdReport *report,
                                double *b,
                                size_t len,
                                double *k1,
                                double *k2);

/**
 * The report as JSON; release with [`rd_string_free`].
 *
 * # Safety
 * `report` must be a live handle or null.
 */
char *rd_report_json(const RdReport *report);

/**
 * # Safety
 * `report` must come from `rd_check` or be null.
 */
void rd_report_free(RdReport *report);

/**
 * # Safety
 * `s` must come from an `rd_*` function returning `char *`, or be null.
 */
void rd_string_free(char *s);

/**
 * M0 e^{K1 t} + (K2 / K1)(e^{K1 t} − 1), or M0 + K2 t when K1 = 0.
 */
double rd_gronwall_envelope(double k1, double k2, double m0, double t);

/**
 * H_p[v] with weights θ, both of length `n`.
 *
 * # Safety
 * `v` and `theta` must hold `n` values; `out` must be writable.
 */
RdStatus rd_multinomial_energy(const double *v,
                               const double *theta,
                               size_t n,
                               uint32_t p,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OVERLAP_RD_H */
