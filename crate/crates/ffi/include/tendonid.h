#ifndef TENDONID_H
#define TENDONID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call. Values 2 to 5 match the CLI exit codes.
 */
typedef enum TendonidStatus {
  TENDONID_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or a buffer of the wrong length.
   */
  TENDONID_STATUS_INVALID_ARGUMENT = 1,
  TENDONID_STATUS_CONFIG = 2,
  TENDONID_STATUS_DATA = 3,
  TENDONID_STATUS_NUMERIC = 4,
  TENDONID_STATUS_INFEASIBLE = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  TENDONID_STATUS_INTERNAL = 6,
} TendonidStatus;

/**
 * Input/output record loaded from CSV.
 */
typedef struct TendonidDataset TendonidDataset;

/**
 * Identified model of any kind.
 */
typedef struct TendonidModel TendonidModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *tendonid_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tendonid_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from [`tendonid_model_to_json`] and not be freed twice.
 */
void tendonid_string_free(char *s);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TendonidStatus tendonid_model_load(const char *path, struct TendonidModel **out);

/**
 * Parses a model from its JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TendonidStatus tendonid_model_from_json(const char *json, struct TendonidModel **out);

/**
 * Serializes a model; free the result with [`tendonid_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TendonidStatus tendonid_model_to_json(const struct TendonidModel *model, char **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tendonid_model_free(struct TendonidModel *model);

/**
 * Number of model inputs, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tendonid_model_num_inputs(const struct TendonidModel *model);

/**
 * Number of model outputs, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tendonid_model_num_outputs(const struct TendonidModel *model);

/**
 * Length of the initial condition expected by [`tendonid_model_simulate`]:
 * the state dimension, or `max_lag · outputs` for ARX models.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tendonid_model_initial_len(const struct TendonidModel *model);

/**
 * Free-run simulation. `u` is `rows × num_inputs`, `y_out` receives
 * `rows × num_outputs`. For ARX models `init` holds the leading output
 * rows of the lag window.
 *
 * # Safety
 * All buffers must be valid for the lengths implied by the arguments.
 */
enum TendonidStatus tendonid_model_simulate(const struct TendonidModel *model,
                                            const double *u,
                                            size_t rows,
                                            const double *init,
                                            size_t init_len,
                                            double *y_out);

/**
 * Loads a `t,u1..,y1..` CSV record.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TendonidStatus tendonid_dataset_load(const char *path, struct TendonidDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void tendonid_dataset_free(struct TendonidDataset *ds);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t tendonid_dataset_len(const struct TendonidDataset *ds);

/**
 * Identifies a model with default settings. `method` is `n4sid`, `arx` or `sindyc`.
 *
 * # Safety
 * `method` must be a NUL-terminated string, `train` a live handle and `out`
 * a valid pointer.
 */
enum TendonidStatus tendonid_identify(const char *method,
                                      const struct TendonidDataset *train,
                                      struct TendonidModel **out);

/**
 * Validation fit in percent. `per_channel` receives `num_outputs` values
 * and may be null when `channels` is 0.
 *
 * # Safety
 * Handles must be live; `mean_fit` must be valid; `per_channel` must hold
 * `channels` doubles.
 */
enum TendonidStatus tendonid_validate(const struct TendonidModel *model,
                                      const struct TendonidDataset *val,
                                      double *mean_fit,
                                      double *per_channel,
                                      size_t channels);

/**
 * End-effector position in metres for motor angles `q1`, `q2` with the
 * default joint ratios and the given link length.
 *
 * # Safety
 * `xyz` must point to 3 writable doubles.
 */
enum TendonidStatus tendonid_forward_kinematics(double q1,
                                                double q2,
                                                double link_length_m,
                                                double *xyz);

/**
 * Solves `min ½zᵀHz + gᵀz` subject to `Az ≤ b` with `H` (`n × n`)
 * positive definite and `A` (`m × n`). `z_out` receives `n` values.
 *
 * # Safety
 * Buffers must be valid for the lengths implied by `n` and `m`;
 * `a` and `b` may be null when `m` is 0; `objective` may be null.
 */
enum TendonidStatus tendonid_solve_qp(size_t n,
                                      size_t m,
                                      const double *h,
                                      const double *g,
                                      const double *a,
                                      const double *b,
                                      double *z_out,
                                      double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TENDONID_H */
