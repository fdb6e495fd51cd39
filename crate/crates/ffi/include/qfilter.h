#ifndef QFILTER_H
#define QFILTER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define QF_HOMODYNE 0

#define QF_COUNTING 1

#define QF_FILTER_NORMALIZED 0

#define QF_FILTER_LINEAR 1

#define QF_METHOD_EULER 0

#define QF_METHOD_RK4 1

typedef enum QfStatus {
  QF_STATUS_OK = 0,
  QF_STATUS_NULL_POINTER = 1,
  QF_STATUS_INVALID_ARGUMENT = 2,
  QF_STATUS_INVALID_MODEL = 3,
  QF_STATUS_INVALID_RECORD = 4,
  QF_STATUS_DIVERGENCE = 5,
  QF_STATUS_BUFFER_TOO_SMALL = 6,
  QF_STATUS_PANIC = 7,
} QfStatus;

/**
 * A system model: Hamiltonian, coupling, initial state, detection scheme.
 */
typedef struct QfModel QfModel;

/**
 * An observation record on a time grid.
 */
typedef struct QfRecord QfRecord;

/**
 * A filter trajectory (normalized states, or linear states with norms).
 */
typedef struct QfTrajectory QfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty if none.
 * The pointer stays valid until the next `qf_*` call on this thread.
 */
const char *qf_last_error(void);

/**
 * Builds a preset model (`"qubit-decay"`, `"rabi-decay"`, `"constant-rate-counting"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum QfStatus qf_model_preset(const char *name,
                              double gamma,
                              double omega,
                              double lambda,
                              int32_t detection_code,
                              struct QfModel **out);

/**
 * Builds a model from explicit `H`, `L` and initial state.
 *
 * # Safety
 * `h`, `l` and `rho0` must each point to `2 * dim * dim` doubles; `out` must be writable.
 */
enum QfStatus qf_model_explicit(size_t dim,
                                const double *h,
                                const double *l,
                                const double *rho0,
                                int32_t detection_code,
                                struct QfModel **out);

/**
 * Hilbert-space dimension of `model`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle from `qf_model_*`.
 */
size_t qf_model_dim(const struct QfModel *model);

/**
 * # Safety
 * `model` must be null or a live handle from `qf_model_*`; it is invalid afterwards.
 */
void qf_model_free(struct QfModel *model);

/**
 * Per-trajectory seed derived from a master seed.
 */
uint64_t qf_derive_seed(uint64_t master_seed, uint64_t index);

/**
 * Simulates trajectory `index` of the ensemble seeded by `master_seed`,
 * returning its record and normalized conditional states.
 *
 * # Safety
 * `model` must be a live handle; `out_record` and `out_trajectory` must be writable.
 */
enum QfStatus qf_simulate(const struct QfModel *model,
                          double t0,
                          double dt,
                          size_t n_steps,
                          uint64_t master_seed,
                          uint64_t index,
                          struct QfRecord **out_record,
                          struct QfTrajectory **out_trajectory);

/**
 * Runs the normalized (`QF_FILTER_NORMALIZED`) or linear (`QF_FILTER_LINEAR`) filter on `record`.
 *
 * # Safety
 * `model` and `record` must be live handles; `out` must be writable.
 */
enum QfStatus qf_run_filter(const struct QfModel *model,
                            const struct QfRecord *record,
                            int32_t kind,
                            struct QfTrajectory **out);

/**
 * Number of stored states (`n_steps + 1`), or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t qf_trajectory_len(const struct QfTrajectory *traj);

/**
 * Writes the conditional expectation of `X` at every stored state; linear
 * trajectories are divided by their norms.
 *
 * # Safety
 * `traj` must be a live handle, `x` must point to `2 * dim * dim` doubles,
 * and `out` to `out_len` writable doubles.
 */
enum QfStatus qf_trajectory_expectations(const struct QfTrajectory *traj,
                                         const double *x,
                                         size_t dim,
                                         double *out,
                                         size_t out_len);

/**
 * Writes the traces of a linear trajectory's unnormalized states.
 *
 * # Safety
 * `traj` must be a live handle and `out` must point to `out_len` writable doubles.
 */
enum QfStatus qf_trajectory_norms(const struct QfTrajectory *traj, double *out, size_t out_len);

/**
 * # Safety
 * `traj` must be null or a live handle; it is invalid afterwards.
 */
void qf_trajectory_free(struct QfTrajectory *traj);

/**
 * Integrates the master equation and writes `tr(rho(t_k) X)` for `k = 0..=n_steps`.
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `2 * dim * dim` doubles
 * for the model's dimension, and `out` to `out_len` writable doubles.
 */
enum QfStatus qf_integrate_master(const struct QfModel *model,
                                  double t0,
                                  double dt,
                                  size_t n_steps,
                                  int32_t method,
                                  const double *x,
                                  double *out,
                                  size_t out_len);

/**
 * Builds a record from raw increments (`dy` for homodyne, 0/1 for counting).
 *
 * # Safety
 * `increments` must point to `n_steps` doubles; `out` must be writable.
 */
enum QfStatus qf_record_new(int32_t detection_code,
                            double t0,
                            double dt,
                            size_t n_steps,
                            const double *increments,
                            struct QfRecord **out);

/**
 * Number of increments in `record`, or 0 for a null handle.
 *
 * # Safety
 * `record` must be null or a live handle.
 */
size_t qf_record_len(const struct QfRecord *record);

/**
 * # Safety
 * `record` must be a live handle and `out` must point to `out_len` writable doubles.
 */
enum QfStatus qf_record_increments(const struct QfRecord *record, double *out, size_t out_len);

/**
 * Serializes `record` to CSV; free the string with `qf_string_free`.
 *
 * # Safety
 * `record` must be a live handle and `out` writable.
 */
enum QfStatus qf_record_to_csv(const struct QfRecord *record, char **out);

/**
 * Parses a record CSV.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` writable.
 */
enum QfStatus qf_record_from_csv(const char *text, struct QfRecord **out);

/**
 * # Safety
 * `record` must be null or a live handle; it is invalid afterwards.
 */
void qf_record_free(struct QfRecord *record);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void qf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QFILTER_H */
