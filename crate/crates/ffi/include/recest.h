#ifndef RECEST_H
#define RECEST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RecestStatus {
  RECEST_STATUS_OK = 0,
  RECEST_STATUS_NULL_POINTER = 1,
  RECEST_STATUS_INVALID_ARGUMENT = 2,
  RECEST_STATUS_NUMERICAL = 3,
  RECEST_STATUS_BUFFER_TOO_SMALL = 4,
  RECEST_STATUS_PANIC = 5,
} RecestStatus;

/**
 * Opaque streaming estimator.
 */
typedef struct RecestEstimator RecestEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread, NUL-terminated and
 * truncated to `len` bytes, into `buf`. Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t recest_last_error(char *buf, size_t len);

/**
 * Normal-location likelihood recursion with known `sigma`; its estimate is
 * the running mean.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum RecestStatus recest_estimator_normal_mle(double sigma,
                                              double theta0,
                                              struct RecestEstimator **out);

/**
 * Huber location recursion `theta_t = theta_{t-1} + s phi_c((X_t - theta_{t-1}) / s) / (t C_g)`
 * with `C_g = 2 Phi(c) - 1`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum RecestStatus recest_estimator_huber_location(double c,
                                                  double scale,
                                                  double theta0,
                                                  struct RecestEstimator **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `est` must be null or a handle from a constructor, not yet freed.
 */
void recest_estimator_free(struct RecestEstimator *est);

/**
 * Feeds one observation and writes the first estimate component to
 * `theta_out` when it is non-null. On failure the estimator is unchanged.
 *
 * # Safety
 * `est` must be a live handle; `theta_out` null or writable.
 */
enum RecestStatus recest_estimator_push(struct RecestEstimator *est, double x, double *theta_out);

/**
 * Copies the current estimate into `out[0..len]`; `len` must be at least
 * the dimension.
 *
 * # Safety
 * `est` must be a live handle and `out` point to `len` writable doubles.
 */
enum RecestStatus recest_estimator_theta(const struct RecestEstimator *est,
                                         double *out,
                                         size_t len);

/**
 * Number of recursion steps taken; zero for a null handle.
 *
 * # Safety
 * `est` must be null or a live handle.
 */
size_t recest_estimator_steps(const struct RecestEstimator *est);

/**
 * Dimension of the parameter; zero for a null handle.
 *
 * # Safety
 * `est` must be null or a live handle.
 */
size_t recest_estimator_dim(const struct RecestEstimator *est);

/**
 * Huber's `phi_c(x)`.
 */
double recest_huber(double x, double c);

/**
 * Hampel's redescending `phi(x)` with corners `alpha < beta`.
 */
double recest_hampel(double x, double alpha, double beta);

/**
 * `C_g` of Huber's function under standard normal residuals.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum RecestStatus recest_c_g_huber_normal(double c, double *out);

/**
 * `C_g` of Hampel's function under standard normal residuals.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum RecestStatus recest_c_g_hampel_normal(double alpha, double beta, double *out);

/**
 * Scale `median |x_i| / 0.6745` of `data[0..len]`.
 *
 * # Safety
 * `data` must point to `len` readable doubles; `out` to a writable double.
 */
enum RecestStatus recest_mad_scale(const double *data, size_t len, double *out);

/**
 * AR(1) series with additive-outlier contamination, `n` values after
 * `burn_in`, written to `out[0..n]`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum RecestStatus recest_simulate_ao(double theta,
                                     double eps,
                                     double sigma2,
                                     size_t n,
                                     size_t burn_in,
                                     uint64_t seed,
                                     double *out,
                                     size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECEST_H */
