#ifndef CNMIXT_H
#define CNMIXT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CnStatus {
  CN_STATUS_OK = 0,
  CN_STATUS_NULL_POINTER = 1,
  CN_STATUS_INVALID_ARGUMENT = 2,
  CN_STATUS_DIMENSION_MISMATCH = 3,
  CN_STATUS_NOT_POSITIVE_DEFINITE = 4,
  CN_STATUS_FIT_FAILED = 5,
  CN_STATUS_INPUT = 6,
  CN_STATUS_PANIC = 7,
} CnStatus;

typedef enum CnInit {
  CN_INIT_RANDOM_SOFT = 0,
  CN_INIT_RANDOM_HARD = 1,
  CN_INIT_KMEANS = 2,
  CN_INIT_MIXT = 3,
} CnInit;

typedef enum CnCriterion {
  CN_CRITERION_AIC = 0,
  CN_CRITERION_AIC3 = 1,
  CN_CRITERION_AICC = 2,
  CN_CRITERION_AICU = 3,
  CN_CRITERION_AWE = 4,
  CN_CRITERION_BIC = 5,
  CN_CRITERION_CAIC = 6,
  CN_CRITERION_ICL = 7,
} CnCriterion;

/**
 * A fitted model.
 */
typedef struct CnFit CnFit;

/**
 * Fit settings. Obtain defaults from [`cnmixt_options_default`].
 *
 * `alpha_min`: NaN means no lower bound. `alpha_fix`, `eta_fix`: NaN means
 * estimated. Each value applies to every component.
 */
typedef struct CnOptions {
  /**
   * A [`CnInit`] value.
   */
  uint32_t init;
  uint64_t seed;
  double alpha_min;
  double alpha_fix;
  double eta_fix;
  double eta_max;
  size_t iter_max;
  double threshold;
  double eps;
  size_t restarts;
} CnOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library defaults: mixt init, alpha_min 0.5, eta_max 1000, iter_max 1000,
 * threshold 1e-3, eps 1e-100, seed 0, no restarts.
 */
struct CnOptions cnmixt_options_default(void);

/**
 * Message of the last failure on this thread. Valid until the next failing
 * call on the same thread; never null.
 */
const char *cnmixt_last_error(void);

/**
 * Fits one structure (`code`, e.g. "EEI") with `g` components to the
 * row-major `n × p` matrix `x`. `options` may be null for defaults.
 *
 * # Safety
 * `x` must hold `n * p` doubles, `code` must be a NUL-terminated string and
 * `out` must be writable. On success `*out` owns a handle for
 * [`cnmixt_fit_free`].
 */
enum CnStatus cnmixt_fit(const double *x,
                         size_t n,
                         size_t p,
                         const char *code,
                         size_t g,
                         const struct CnOptions *options,
                         struct CnFit **out);

/**
 * Releases a fit. Null is ignored.
 *
 * # Safety
 * `fit` must come from [`cnmixt_fit`] and not be freed twice.
 */
void cnmixt_fit_free(struct CnFit *fit);

/**
 * Observations, dimension and components of a fit.
 *
 * # Safety
 * `fit` must be a live handle; each out pointer may be null to skip it.
 */
enum CnStatus cnmixt_fit_shape(const struct CnFit *fit, size_t *n, size_t *p, size_t *g);

/**
 * Final log-likelihood, free parameter count, iteration count and whether
 * the stopping rule was met.
 *
 * # Safety
 * `fit` must be a live handle; each out pointer may be null to skip it.
 */
enum CnStatus cnmixt_fit_summary(const struct CnFit *fit,
                                 double *loglik,
                                 size_t *q,
                                 size_t *iterations,
                                 bool *converged);

/**
 * One information criterion (a [`CnCriterion`] value), larger is better.
 *
 * # Safety
 * `fit` must be a live handle and `value` writable.
 */
enum CnStatus cnmixt_fit_criterion(const struct CnFit *fit, uint32_t criterion, double *value);

/**
 * Mixing proportions, α and η, each `g` long.
 *
 * # Safety
 * `fit` must be a live handle; each out pointer must hold `g` doubles.
 */
enum CnStatus cnmixt_fit_weights(const struct CnFit *fit, double *pi, double *alpha, double *eta);

/**
 * Mean (`p` doubles) and scale matrix (`p × p`, row-major) of component
 * `k`, counted from zero.
 *
 * # Safety
 * `fit` must be a live handle; `mu` must hold `p` and `sigma` `p * p` doubles.
 */
enum CnStatus cnmixt_fit_component(const struct CnFit *fit, size_t k, double *mu, double *sigma);

/**
 * Posterior memberships `z` and good-point posteriors `v`, each `n × g`
 * row-major. Either pointer may be null to skip it.
 *
 * # Safety
 * `fit` must be a live handle; non-null outputs must hold `n * g` doubles.
 */
enum CnStatus cnmixt_fit_posteriors(const struct CnFit *fit, double *z, double *v);

/**
 * 1-based MAP component and good (1) / bad (0) flag of every observation.
 *
 * # Safety
 * `fit` must be a live handle; `group` and `is_good` must hold `n` entries.
 */
enum CnStatus cnmixt_fit_detections(const struct CnFit *fit, uint32_t *group, uint8_t *is_good);

/**
 * Contaminated normal density at each row of the row-major `n × p` matrix
 * `x`. Writes log-densities when `log` is true.
 *
 * # Safety
 * `x` must hold `n * p`, `mu` `p`, `sigma` `p * p` and `out` `n` doubles.
 */
enum CnStatus cnmixt_density(const double *x,
                             size_t n,
                             size_t p,
                             const double *mu,
                             const double *sigma,
                             double alpha,
                             double eta,
                             bool log,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CNMIXT_H */
