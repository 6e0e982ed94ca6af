#ifndef CORRSURF_H
#define CORRSURF_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CorrsurfRight {
  CORRSURF_RIGHT_PUT = 0,
  CORRSURF_RIGHT_CALL = 1,
} CorrsurfRight;

typedef enum CorrsurfStatus {
  CORRSURF_STATUS_OK = 0,
  CORRSURF_STATUS_NULL_POINTER = 1,
  CORRSURF_STATUS_INVALID_INPUT = 2,
  CORRSURF_STATUS_DOMAIN = 3,
  CORRSURF_STATUS_UNATTAINABLE = 4,
  CORRSURF_STATUS_NO_CONVERGENCE = 5,
  CORRSURF_STATUS_IO = 6,
  CORRSURF_STATUS_PARSE = 7,
  CORRSURF_STATUS_PANIC = 8,
  CORRSURF_STATUS_OTHER = 9,
} CorrsurfStatus;

typedef enum CorrsurfStyle {
  CORRSURF_STYLE_EUROPEAN = 0,
  CORRSURF_STYLE_AMERICAN = 1,
} CorrsurfStyle;

/**
 * Fitted factor model loaded from JSON.
 */
typedef struct CorrsurfModel CorrsurfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *corrsurf_last_error(void);

/**
 * Option value. `steps` is the tree size for American style and ignored for
 * European style, which also ignores dividends.
 *
 * # Safety
 * `div_times` and `div_amounts` must each point to `n_dividends` doubles (or
 * be null when it is zero); `out` must be writable.
 */
enum CorrsurfStatus corrsurf_option_price(double spot,
                                          double strike,
                                          double rate,
                                          double tau,
                                          double vol,
                                          enum CorrsurfRight right,
                                          enum CorrsurfStyle style,
                                          size_t steps,
                                          const double *div_times,
                                          const double *div_amounts,
                                          size_t n_dividends,
                                          double *out);

/**
 * Volatility reproducing `price` under the same conventions as
 * [`corrsurf_option_price`].
 *
 * # Safety
 * As for [`corrsurf_option_price`].
 */
enum CorrsurfStatus corrsurf_implied_vol(double price,
                                         double spot,
                                         double strike,
                                         double rate,
                                         double tau,
                                         enum CorrsurfRight right,
                                         enum CorrsurfStyle style,
                                         size_t steps,
                                         const double *div_times,
                                         const double *div_amounts,
                                         size_t n_dividends,
                                         double *out);

/**
 * Variance of a weighted basket whose members share one correlation.
 *
 * # Safety
 * `vols` and `weights` must each point to `n` doubles; `out` must be writable.
 */
enum CorrsurfStatus corrsurf_basket_variance(const double *vols,
                                             const double *weights,
                                             size_t n,
                                             double rho,
                                             double *out);

/**
 * Common correlation implied by a basket variance.
 *
 * # Safety
 * `vols` and `weights` must each point to `n` doubles; `out` must be writable.
 */
enum CorrsurfStatus corrsurf_equicorrelation(double basket_var,
                                             const double *vols,
                                             const double *weights,
                                             size_t n,
                                             double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum CorrsurfStatus corrsurf_fisher_z(double rho, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum CorrsurfStatus corrsurf_fisher_z_inv(double z, double *out);

/**
 * Loads a model written by the `fit` command. Release it with
 * [`corrsurf_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CorrsurfStatus corrsurf_model_load(const char *path, struct CorrsurfModel **out);

/**
 * Number of retained factors.
 *
 * # Safety
 * `model` must come from [`corrsurf_model_load`]; `out` must be writable.
 */
enum CorrsurfStatus corrsurf_model_factor_count(const struct CorrsurfModel *model, size_t *out);

/**
 * Copies the scores of the last estimation day into `scores` and their
 * count into `out`.
 *
 * # Safety
 * `model` must come from [`corrsurf_model_load`]; `scores` must have room
 * for the factor count; `out` must be writable.
 */
enum CorrsurfStatus corrsurf_model_last_scores(const struct CorrsurfModel *model,
                                               double *scores,
                                               size_t capacity,
                                               size_t *out);

/**
 * Correlation of the surface with factor scores `scores` at `(kappa, tau)`.
 *
 * # Safety
 * `model` must come from [`corrsurf_model_load`]; `scores` must point to
 * `n_scores` doubles; `out` must be writable.
 */
enum CorrsurfStatus corrsurf_model_evaluate(const struct CorrsurfModel *model,
                                            const double *scores,
                                            size_t n_scores,
                                            double kappa,
                                            double tau,
                                            double *out);

/**
 * # Safety
 * `model` must come from [`corrsurf_model_load`] and not be used afterwards.
 * Null is ignored.
 */
void corrsurf_model_free(struct CorrsurfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRSURF_H */
