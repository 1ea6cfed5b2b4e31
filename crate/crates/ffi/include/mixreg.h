#ifndef MIXREG_H
#define MIXREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MixregLoss {
  MIXREG_LOSS_SQUARED_ERROR = 0,
  MIXREG_LOSS_CROSS_ENTROPY = 1,
  MIXREG_LOSS_LOGISTIC = 2,
} MixregLoss;

typedef enum MixregMethod {
  MIXREG_METHOD_ERM = 0,
  MIXREG_METHOD_MIXUP = 1,
  MIXREG_METHOD_ERM_MODIFIED = 2,
  MIXREG_METHOD_MIXUP_APPROX = 3,
} MixregMethod;

typedef enum MixregStatus {
  MIXREG_STATUS_OK = 0,
  MIXREG_STATUS_NULL_POINTER = 1,
  MIXREG_STATUS_DOMAIN = 2,
  MIXREG_STATUS_SHAPE = 3,
  MIXREG_STATUS_IO = 4,
  MIXREG_STATUS_NUMERIC = 5,
  MIXREG_STATUS_PANIC = 6,
} MixregStatus;

/**
 * Opaque dataset handle.
 */
typedef struct MixregDataset MixregDataset;

/**
 * Opaque model handle.
 */
typedef struct MixregModel MixregModel;

typedef struct MixregCoefficients {
  double alpha;
  double theta_bar;
  double sigma_sq;
  double gamma_sq;
} MixregCoefficients;

/**
 * Training options. `rff_features == 0` selects the linear model.
 */
typedef struct MixregTrainOptions {
  enum MixregMethod method;
  enum MixregLoss loss;
  double alpha;
  size_t epochs;
  size_t batch_size;
  double step_size;
  uint64_t seed;
  size_t rff_features;
  double sigma_rff;
  /**
   * Nonzero drops the Hessian term of the approximate objective.
   */
  int32_t drop_r2;
} MixregTrainOptions;

typedef struct MixregBreakdown {
  double erm_modified;
  double r1;
  double r2;
  double r3;
  double r4;
  double total;
} MixregBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length
 * without the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mixreg_last_error_message(char *buf, size_t len);

/**
 * NUL-terminated library version; static storage.
 */
const char *mixreg_version(void);

/**
 * # Safety
 * `out` must be null or valid for writes.
 */
enum MixregStatus mixreg_theta_bar(double alpha, double *out);

/**
 * # Safety
 * `out` must be null or valid for writes.
 */
enum MixregStatus mixreg_coefficients(double alpha, struct MixregCoefficients *out);

/**
 * Two-moons dataset with one-hot labels (`c = 2`).
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum MixregStatus mixreg_dataset_two_moons(size_t n,
                                           double noise,
                                           uint64_t seed,
                                           struct MixregDataset **out);

/**
 * Dataset from row-major `x` (`n×d`) and `y` (`n×c`).
 *
 * # Safety
 * `x` and `y` must point to `n*d` and `n*c` readable doubles; `out` must be
 * valid for writes.
 */
enum MixregStatus mixreg_dataset_from_arrays(const double *x,
                                             const double *y,
                                             size_t n,
                                             size_t d,
                                             size_t c,
                                             struct MixregDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum MixregStatus mixreg_dataset_load_csv(const char *path_, struct MixregDataset **out);

/**
 * # Safety
 * `ds` must be a live handle; `path` a NUL-terminated string.
 */
enum MixregStatus mixreg_dataset_save_csv(const struct MixregDataset *ds, const char *path_);

/**
 * Writes `n`, `d` and `c`.
 *
 * # Safety
 * `ds` must be a live handle; outputs must be valid for writes.
 */
enum MixregStatus mixreg_dataset_shape(const struct MixregDataset *ds,
                                       size_t *n,
                                       size_t *d,
                                       size_t *c);

/**
 * Releases a dataset; null is a no-op.
 *
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void mixreg_dataset_free(struct MixregDataset *ds);

/**
 * Defaults of the two-moons protocol (logistic loss, RFF with 1000
 * features, `σ = 10`, batch 50, step 5, 500 epochs).
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum MixregStatus mixreg_train_options_default(struct MixregTrainOptions *out);

/**
 * Trains a fresh model. Two-class one-hot data is converted to a scalar
 * target under the logistic loss, so the model then has one output.
 *
 * # Safety
 * Handles must be live; `opts` readable; `out` valid for writes.
 */
enum MixregStatus mixreg_train(const struct MixregDataset *train,
                               const struct MixregDataset *test,
                               const struct MixregTrainOptions *opts,
                               struct MixregModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum MixregStatus mixreg_model_load_json(const char *path_, struct MixregModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum MixregStatus mixreg_model_save_json(const struct MixregModel *model, const char *path_);

/**
 * # Safety
 * `model` must be a live handle; outputs valid for writes.
 */
enum MixregStatus mixreg_model_dims(const struct MixregModel *model, size_t *d, size_t *c);

/**
 * Releases a model; null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void mixreg_model_free(struct MixregModel *model);

/**
 * `out = f(x)`.
 *
 * # Safety
 * `x` must hold `d` doubles and `out` room for `c`.
 */
enum MixregStatus mixreg_predict(const struct MixregModel *model,
                                 const double *x,
                                 size_t d,
                                 double *out,
                                 size_t c);

/**
 * `out = ȳ(1 − 1/θ̄) + f(θ̄x + (1 − θ̄)x̄)/θ̄`.
 *
 * # Safety
 * `x`, `xbar` must hold `d` doubles, `ybar` and `out` `c` doubles.
 */
enum MixregStatus mixreg_rescaled_predict(const struct MixregModel *model,
                                          const double *x,
                                          const double *xbar,
                                          size_t d,
                                          const double *ybar,
                                          double theta_bar,
                                          double *out,
                                          size_t c);

/**
 * Regularizer breakdown of `model` on `ds`. Two-class one-hot data is
 * converted to a scalar target under the logistic loss.
 *
 * # Safety
 * Handles must be live; `out` valid for writes.
 */
enum MixregStatus mixreg_breakdown(const struct MixregDataset *ds,
                                   const struct MixregModel *model,
                                   enum MixregLoss loss,
                                   double alpha,
                                   struct MixregBreakdown *out);

/**
 * Runs the verification suite. `mutation` indexes none, shift_theta_bar,
 * drop_gamma, drop_sigma, flip_r3_sign. Writes 1 to `all_passed` iff every
 * check passed, and the number of checks and failures.
 *
 * # Safety
 * Outputs must be valid for writes.
 */
enum MixregStatus mixreg_verify_run_all(uint64_t seed,
                                        uint32_t mutation,
                                        int32_t *all_passed,
                                        size_t *checks,
                                        size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXREG_H */
