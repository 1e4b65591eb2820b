#ifndef RCP_H
#define RCP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RCP_FUNCTIONAL_SUP = 0,
  RCP_FUNCTIONAL_INTEGRAL = 1,
  RCP_FUNCTIONAL_WEIGHTED_SUP = 2,
} RcpFunctional;

typedef enum {
  RCP_KERNEL_FLAT_TOP = 0,
  RCP_KERNEL_BARTLETT = 1,
} RcpKernel;

typedef enum {
  RCP_SCALE_ESTIMATOR_MD = 0,
  RCP_SCALE_ESTIMATOR_GMD = 1,
} RcpScaleEstimator;

typedef enum {
  RCP_STATUS_OK = 0,
  RCP_STATUS_NULL_POINTER = 1,
  RCP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Empty, non-finite or too short input.
   */
  RCP_STATUS_INVALID_INPUT = 3,
  /**
   * Zero scale or a degenerate long-run covariance.
   */
  RCP_STATUS_DEGENERATE = 4,
  RCP_STATUS_NOT_TABULATED = 5,
  /**
   * Singular or non-symmetric matrix.
   */
  RCP_STATUS_NUMERICAL = 6,
  RCP_STATUS_BUFFER_TOO_SMALL = 7,
  RCP_STATUS_PANIC = 8,
} RcpStatus;

typedef struct RcpOutcome RcpOutcome;

/**
 * Transformation choice, resolved against the series dimension at test time.
 */
typedef struct RcpPsi RcpPsi;

/**
 * Row-major observations.
 */
typedef struct RcpSeries RcpSeries;

/**
 * Test settings. Start from [`rcp_test_options_default`].
 */
typedef struct {
  double alpha;
  RcpFunctional functional;
  /**
   * Used only with `WeightedSup`.
   */
  double weight_exponent;
  /**
   * NaN selects the default bandwidth rule.
   */
  double bandwidth;
  RcpKernel kernel;
  bool correction;
  /**
   * Always simulate the critical value instead of using the table.
   */
  bool monte_carlo;
  bool p_value;
  size_t mc_grid;
  size_t mc_reps;
  uint64_t mc_seed;
} RcpTestOptions;

typedef struct {
  double statistic;
  double uncorrected_statistic;
  double v_hat;
  double bandwidth;
  double critical_value;
  bool reject;
  size_t change_point_index;
} RcpScaleResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rcp_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *rcp_last_error(void);

/**
 * Copies `n_obs * dim` row-major values into a new series.
 *
 * # Safety
 * `data` must point to `n_obs * dim` readable doubles; `out` must be writable.
 */
RcpStatus rcp_series_new(const double *data, size_t n_obs, size_t dim, RcpSeries **out);

/**
 * # Safety
 * `series` must come from [`rcp_series_new`] or be NULL.
 */
void rcp_series_free(RcpSeries *series);

/**
 * # Safety
 * `series` must be a live handle or NULL (returns 0).
 */
size_t rcp_series_n_obs(const RcpSeries *series);

/**
 * # Safety
 * `series` must be a live handle or NULL (returns 0).
 */
size_t rcp_series_dim(const RcpSeries *series);

/**
 * New transformation from a variant name such as `"hubervar"` or
 * `"hubercovjoint"`. Threshold variants default to `k^2 = q_chi2_1(0.95)`.
 *
 * # Safety
 * `variant` must be a NUL-terminated string; `out` must be writable.
 */
RcpStatus rcp_psi_new(const char *variant, RcpPsi **out);

/**
 * # Safety
 * `psi` must come from [`rcp_psi_new`] or be NULL.
 */
void rcp_psi_free(RcpPsi *psi);

/**
 * Sets the threshold directly; `INFINITY` gives the unclamped statistic.
 *
 * # Safety
 * `psi` must be a live handle.
 */
RcpStatus rcp_psi_set_k(RcpPsi *psi, double k);

/**
 * Sets the threshold to `sqrt(q_chi2_1(level))`.
 *
 * # Safety
 * `psi` must be a live handle.
 */
RcpStatus rcp_psi_set_chi2_level(RcpPsi *psi, double level);

/**
 * Direction for the projection variant.
 *
 * # Safety
 * `a` must point to `len` readable doubles.
 */
RcpStatus rcp_psi_set_direction(RcpPsi *psi, const double *a, size_t len);

RcpTestOptions rcp_test_options_default(void);

/**
 * Runs the robust CUSUM test. `options` may be NULL for the defaults.
 *
 * # Safety
 * `series` and `psi` must be live handles; `out` must be writable.
 */
RcpStatus rcp_run_test(const RcpSeries *series,
                       const RcpPsi *psi,
                       const RcpTestOptions *options,
                       RcpOutcome **out);

/**
 * # Safety
 * `outcome` must come from [`rcp_run_test`] or be NULL.
 */
void rcp_outcome_free(RcpOutcome *outcome);

/**
 * Uncorrected statistic; NaN for a NULL handle.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
double rcp_outcome_statistic(const RcpOutcome *outcome);

/**
 * Statistic compared with the critical value, corrected when applicable.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
double rcp_outcome_statistic_used(const RcpOutcome *outcome);

/**
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
double rcp_outcome_critical_value(const RcpOutcome *outcome);

/**
 * Monte Carlo p-value, or NaN when none was requested.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
double rcp_outcome_p_value(const RcpOutcome *outcome);

/**
 * 1 if the null is rejected, 0 if not, -1 for a NULL handle.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
int rcp_outcome_reject(const RcpOutcome *outcome);

/**
 * 1-based estimated change-point index; 0 for a NULL handle.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
size_t rcp_outcome_change_point(const RcpOutcome *outcome);

/**
 * Writes the outcome as JSON into `buf` (NUL-terminated). `needed`
 * receives the required size including the terminator; with a short or
 * NULL buffer the call returns `BufferTooSmall` and writes nothing.
 *
 * # Safety
 * `buf` must hold `len` writable bytes or be NULL; `needed` may be NULL.
 */
RcpStatus rcp_outcome_to_json(const RcpOutcome *outcome, char *buf, size_t len, size_t *needed);

/**
 * Tabulated quantile of `sup` of a squared Bessel bridge of dimension `s`.
 *
 * # Safety
 * `out` must be writable.
 */
RcpStatus rcp_quantile(size_t s, double level, double *out);

/**
 * Simulated quantile; deterministic for a given seed.
 * Zero `n_grid` or `n_rep` selects the default.
 *
 * # Safety
 * `out` must be writable.
 */
RcpStatus rcp_mc_quantile(size_t s,
                          double level,
                          uint64_t seed,
                          size_t n_rep,
                          size_t n_grid,
                          double *out);

/**
 * CUSUM test for a scale change based on the mean or Gini mean difference.
 *
 * # Safety
 * `x` must point to `n` readable doubles; `out` must be writable.
 */
RcpStatus rcp_scale_test(const double *x,
                         size_t n,
                         RcpScaleEstimator estimator,
                         double alpha,
                         RcpScaleResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RCP_H */
