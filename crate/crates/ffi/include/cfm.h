#ifndef CFM_H
#define CFM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status returned by every fallible call.
 */
typedef enum CfmStatus {
  CFM_STATUS_OK = 0,
  /**
   * Null pointer, bad length or malformed string.
   */
  CFM_STATUS_INVALID_ARGUMENT = 1,
  CFM_STATUS_VALIDATION = 2,
  CFM_STATUS_NUMERICAL = 3,
  CFM_STATUS_IO = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  CFM_STATUS_INTERNAL = 5,
} CfmStatus;

/**
 * Observed data: outcomes, treatment and covariates.
 */
typedef struct CfmDataset CfmDataset;

/**
 * Kept effect draws of one chain.
 */
typedef struct CfmFit CfmFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cfm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cfm_version(void);

/**
 * Build a dataset from row-major arrays: `y` is `n x q`, `x` is `n x p`
 * on the original covariate scale, `t` holds 0 or 1 per unit.
 *
 * # Safety
 * Array pointers must be valid for the stated lengths; `out` must be writable.
 */
enum CfmStatus cfm_dataset_new(size_t n,
                               size_t q,
                               size_t p,
                               const double *y,
                               const uint8_t *t,
                               const double *x,
                               struct CfmDataset **out);

/**
 * Load a dataset CSV with the default column layout (`id`, `t`, `y_*`, `x_*`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CfmStatus cfm_dataset_load_csv(const char *path, struct CfmDataset **out);

/**
 * Simulate a reduced-size dataset for scenario 1-6. The true effects are
 * kept on the handle.
 *
 * # Safety
 * `out` must be writable.
 */
enum CfmStatus cfm_dataset_simulate(uint8_t scenario, uint64_t seed, struct CfmDataset **out);

/**
 * # Safety
 * `data` must come from a `cfm_dataset_*` constructor or be null.
 */
void cfm_dataset_free(struct CfmDataset *data);

/**
 * Write the unit, outcome and covariate counts.
 *
 * # Safety
 * `data` must be a live handle; output pointers must be writable.
 */
enum CfmStatus cfm_dataset_dims(const struct CfmDataset *data, size_t *n, size_t *q, size_t *p);

/**
 * Copy the true effects of a simulated dataset into `out[0..len]`, where
 * `len` must equal the outcome count.
 *
 * # Safety
 * `data` must be a live handle; `out` must be valid for `len` writes.
 */
enum CfmStatus cfm_dataset_true_sate(const struct CfmDataset *data, double *out, size_t len);

/**
 * Run one chain. `config_json` may be null for the default configuration.
 *
 * # Safety
 * `data` must be a live handle; `config_json` null or NUL-terminated;
 * `out` must be writable.
 */
enum CfmStatus cfm_fit(const struct CfmDataset *data,
                       const char *config_json,
                       uint64_t seed,
                       struct CfmFit **out);

/**
 * # Safety
 * `fit` must come from `cfm_fit` or be null.
 */
void cfm_fit_free(struct CfmFit *fit);

/**
 * Kept draw and outcome counts of a fit.
 *
 * # Safety
 * `fit` must be a live handle; output pointers must be writable.
 */
enum CfmStatus cfm_fit_dims(const struct CfmFit *fit, size_t *draws, size_t *outcomes);

/**
 * Copy the effect draws row-major (`draws x outcomes`) into `out[0..len]`.
 *
 * # Safety
 * `fit` must be a live handle; `out` must be valid for `len` writes.
 */
enum CfmStatus cfm_fit_sate_draws(const struct CfmFit *fit, double *out, size_t len);

/**
 * Posterior mean and equal-tailed interval bounds per outcome. Each
 * output buffer must hold `len` values, the outcome count.
 *
 * # Safety
 * `fit` must be a live handle; buffers must be valid for `len` writes.
 */
enum CfmStatus cfm_fit_summary(const struct CfmFit *fit,
                               double level,
                               double *mean,
                               double *lo,
                               double *hi,
                               size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFM_H */
