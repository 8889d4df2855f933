#ifndef NUCPRIOR_H
#define NUCPRIOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NucpriorStatus {
  NUCPRIOR_STATUS_OK = 0,
  NUCPRIOR_STATUS_NULL_POINTER = 1,
  NUCPRIOR_STATUS_INVALID_ARGUMENT = 2,
  NUCPRIOR_STATUS_DIMENSION = 3,
  NUCPRIOR_STATUS_IO = 4,
  NUCPRIOR_STATUS_PARSE = 5,
  NUCPRIOR_STATUS_NON_FINITE = 6,
  NUCPRIOR_STATUS_PANIC = 7,
} NucpriorStatus;

/**
 * Opaque trained model.
 */
typedef struct NucpriorModel NucpriorModel;

/**
 * Precision/recall/F1 of one image.
 */
typedef struct NucpriorReport {
  size_t tp;
  size_t fp;
  size_t fn_;
  double precision;
  double recall;
  double f1;
} NucpriorReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *nucprior_last_error(void);

/**
 * Loads a JSON checkpoint. On success `*out` owns a model to be released
 * with [`nucprior_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NucpriorStatus nucprior_model_load(const char *path, struct NucpriorModel **out);

/**
 * # Safety
 * `model` must come from [`nucprior_model_load`] and not be used afterwards. NULL is ignored.
 */
void nucprior_model_free(struct NucpriorModel *model);

/**
 * Number of convolution layers of the model.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum NucpriorStatus nucprior_model_depth(const struct NucpriorModel *model, size_t *out);

/**
 * Predicted center map of an `h` x `w` image into `out` (same size).
 *
 * # Safety
 * `image` and `out` must each hold `h * w` doubles.
 */
enum NucpriorStatus nucprior_forward(const struct NucpriorModel *model,
                                     const double *image,
                                     size_t h,
                                     size_t w,
                                     double *out);

/**
 * Peaks of a center map above `threshold`. Writes up to `capacity` pairs to
 * `out_rc` and the total number found to `out_count`.
 *
 * # Safety
 * `yhat` must hold `h * w` doubles, `out_rc` room for `2 * capacity` values.
 */
enum NucpriorStatus nucprior_detect(const double *yhat,
                                    size_t h,
                                    size_t w,
                                    double threshold,
                                    size_t nms_radius,
                                    size_t *out_rc,
                                    size_t capacity,
                                    size_t *out_count);

/**
 * Binary Canny edge map (0/1) of an image.
 *
 * # Safety
 * `image` and `out` must each hold `h * w` values.
 */
enum NucpriorStatus nucprior_canny(const double *image,
                                   size_t h,
                                   size_t w,
                                   double blur_sigma,
                                   double low_threshold,
                                   double high_threshold,
                                   uint8_t *out);

/**
 * Mean SSIM (8x8 uniform window) of two equally sized images.
 *
 * # Safety
 * `a` and `b` must each hold `h * w` doubles; `out` must be valid.
 */
enum NucpriorStatus nucprior_ssim(const double *a,
                                  const double *b,
                                  size_t h,
                                  size_t w,
                                  double *out);

/**
 * Complex-wavelet SSIM of two equally sized images (default pyramid).
 *
 * # Safety
 * `a` and `b` must each hold `h * w` doubles; `out` must be valid.
 */
enum NucpriorStatus nucprior_cw_ssim(const double *a,
                                     const double *b,
                                     size_t h,
                                     size_t w,
                                     double *out);

/**
 * Greedy CW-SSIM grouping of `count` square shapes stored back to back.
 * Writes the index of each kept representative to `out_indices` (room for
 * `count`) and their number to `out_count`.
 *
 * # Safety
 * `shapes` must hold `count * side * side` doubles.
 */
enum NucpriorStatus nucprior_eliminate_shapes(const double *shapes,
                                              size_t count,
                                              size_t side,
                                              double threshold,
                                              size_t *out_indices,
                                              size_t *out_count);

/**
 * Golden-region matching of detections against ground truth.
 *
 * # Safety
 * `detections` must hold `2 * n_detections` values and `gt` `2 * n_gt`.
 */
enum NucpriorStatus nucprior_evaluate(const size_t *detections,
                                      size_t n_detections,
                                      const size_t *gt,
                                      size_t n_gt,
                                      double golden_radius,
                                      struct NucpriorReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NUCPRIOR_H */
