#ifndef EVSI_H
#define EVSI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call. Zero means success.
 */
typedef enum EvsiStatus {
  EVSI_STATUS_OK = 0,
  EVSI_STATUS_NULL_POINTER = 1,
  EVSI_STATUS_INVALID_ARGUMENT = 2,
  EVSI_STATUS_SHAPE = 3,
  EVSI_STATUS_DOMAIN = 4,
  EVSI_STATUS_NUMERIC = 5,
  EVSI_STATUS_IO = 6,
  EVSI_STATUS_PANIC = 7,
} EvsiStatus;

/**
 * Likelihood of the proposed study's observations.
 */
typedef enum EvsiFamily {
  EVSI_FAMILY_GAUSSIAN = 0,
  EVSI_FAMILY_BERNOULLI = 1,
  EVSI_FAMILY_POISSON = 2,
  /**
   * Uses `EvsiSpec::trials`.
   */
  EVSI_FAMILY_BINOMIAL = 3,
  EVSI_FAMILY_EXPONENTIAL = 4,
} EvsiFamily;

/**
 * Which conditional-benefit approximation a fitted estimator uses.
 */
typedef enum EvsiCurveMethod {
  EVSI_CURVE_METHOD_TGA = 0,
  EVSI_CURVE_METHOD_GA = 1,
} EvsiCurveMethod;

/**
 * Opaque probabilistic analysis dataset.
 */
typedef struct EvsiDataset EvsiDataset;

/**
 * Opaque benefit splines fitted once and reused across sample sizes.
 */
typedef struct EvsiEstimator EvsiEstimator;

/**
 * Proposed study design. The per-focal arrays all have `n_focal` entries.
 */
typedef struct EvsiSpec {
  /**
   * Zero-based parameter columns informed by the study.
   */
  const size_t *focal;
  size_t n_focal;
  enum EvsiFamily family;
  uint32_t trials;
  const double *mu0;
  const double *sigma2;
  const double *n0;
} EvsiSpec;

/**
 * One point of an EVSI curve.
 */
typedef struct EvsiCurvePoint {
  uint64_t n;
  double evsi;
  double mc_se;
} EvsiCurvePoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *evsi_last_error(void);

/**
 * Builds a dataset from column-major `theta` (`m` x `p`) and net benefits
 * `nb` (`m` x `d`). Columns are named `theta1..` and `d1..`.
 *
 * # Safety
 * `theta` and `nb` must point at `m * p` and `m * d` doubles, and `out`
 * must be writable.
 */
enum EvsiStatus evsi_dataset_new(const double *theta,
                                 size_t m,
                                 size_t p,
                                 const double *nb,
                                 size_t d,
                                 struct EvsiDataset **out);

/**
 * Loads a dataset from a CSV file with `param.*` and `nb.*` columns.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum EvsiStatus evsi_dataset_load_csv(const char *path, struct EvsiDataset **out);

/**
 * Number of rows, or zero for a NULL handle.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t evsi_dataset_n_samples(const struct EvsiDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void evsi_dataset_free(struct EvsiDataset *dataset);

/**
 * Fits the benefit splines for `spec` with the default basis.
 *
 * # Safety
 * `dataset` must be a live handle, the arrays in `spec` must hold
 * `spec.n_focal` entries, and `out` must be writable.
 */
enum EvsiStatus evsi_estimator_fit(const struct EvsiDataset *dataset,
                                   const struct EvsiSpec *spec,
                                   bool variance_adjustment,
                                   struct EvsiEstimator **out);

/**
 * Evaluates the curve on a strictly increasing grid, writing `len` points.
 *
 * # Safety
 * `estimator` must be a live handle; `grid` and `out` must hold `len` entries.
 */
enum EvsiStatus evsi_estimator_curve(const struct EvsiEstimator *estimator,
                                     enum EvsiCurveMethod method,
                                     const uint64_t *grid,
                                     size_t len,
                                     struct EvsiCurvePoint *out);

/**
 * # Safety
 * `estimator` must be NULL or a handle not yet freed.
 */
void evsi_estimator_free(struct EvsiEstimator *estimator);

/**
 * Regression-on-simulated-data curve; reproducible for a fixed `seed`.
 *
 * # Safety
 * As for [`evsi_estimator_fit`] and [`evsi_estimator_curve`].
 */
enum EvsiStatus evsi_curve_npreg(const struct EvsiDataset *dataset,
                                 const struct EvsiSpec *spec,
                                 const uint64_t *grid,
                                 size_t len,
                                 uint64_t seed,
                                 struct EvsiCurvePoint *out);

/**
 * EVPPI of the given parameter columns, with its Monte Carlo standard error.
 *
 * # Safety
 * `dataset` must be a live handle, `focal` must hold `n_focal` entries and
 * `evppi_out`, `mc_se_out` must be writable.
 */
enum EvsiStatus evsi_evppi(const struct EvsiDataset *dataset,
                           const size_t *focal,
                           size_t n_focal,
                           double *evppi_out,
                           double *mc_se_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVSI_H */
