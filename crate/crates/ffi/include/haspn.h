#ifndef HASPN_H
#define HASPN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define HASPN_OK 0

/**
 * A required pointer was null or an argument was out of range.
 */
#define HASPN_ERR_ARGUMENT 1

#define HASPN_ERR_CONFIG 2

/**
 * Image, dimension or shape errors.
 */
#define HASPN_ERR_DATA 3

#define HASPN_ERR_CHECKPOINT 4

/**
 * The output buffer is smaller than the result.
 */
#define HASPN_ERR_BUFFER 5

/**
 * An internal panic was caught at the boundary.
 */
#define HASPN_ERR_INTERNAL 6

#define HASPN_SSIM_GLOBAL 0

#define HASPN_SSIM_WINDOWED 1

/**
 * Opaque handle to a loaded network.
 */
typedef struct HaspnModel HaspnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *haspn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *haspn_version(void);

/**
 * Loads a checkpoint file. On success `*out` owns a handle to release with
 * [`haspn_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t haspn_model_load(const char *path, struct HaspnModel **out);

/**
 * Builds a network whose output is bilinear column interpolation of the
 * input, useful as a reference and for testing integrations.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int32_t haspn_model_interpolation(uint32_t scale, struct HaspnModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void haspn_model_free(struct HaspnModel *model);

/**
 * Column up-sampling factor of the network, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t haspn_model_scale(const struct HaspnModel *model);

/**
 * Super-resolves a `height x width` image into `out`, which receives
 * `height * width * scale` values clamped to `[0, 1]`.
 *
 * # Safety
 * `lr` must hold `height * width` values and `out` at least `out_len`.
 */
int32_t haspn_model_infer(const struct HaspnModel *model,
                          const double *lr,
                          size_t height,
                          size_t width,
                          double *out,
                          size_t out_len);

/**
 * Bicubic column interpolation by `scale`, clamped to `[0, 1]`. Input column
 * `i` reappears unchanged at output column `i * scale`.
 *
 * # Safety
 * `lr` must hold `height * width` values and `out` at least `out_len`.
 */
int32_t haspn_bicubic(const double *lr,
                      size_t height,
                      size_t width,
                      uint32_t scale,
                      double *out,
                      size_t out_len);

/**
 * Keeps every `factor`-th column; `out` receives `height * width / factor`
 * values.
 *
 * # Safety
 * `img` must hold `height * width` values and `out` at least `out_len`.
 */
int32_t haspn_undersample(const double *img,
                          size_t height,
                          size_t width,
                          uint32_t factor,
                          double *out,
                          size_t out_len);

/**
 * Splits an image into its Gaussian-blurred part and the high-frequency
 * residual. Each output holds `height * width` values.
 *
 * # Safety
 * `img`, `blurred` and `residual` must each hold `height * width` values.
 */
int32_t haspn_decompose(const double *img,
                        size_t height,
                        size_t width,
                        double *blurred,
                        double *residual);

/**
 * Peak signal-to-noise ratio in dB; identical images give infinity.
 *
 * # Safety
 * `sr` and `hr` must hold `height * width` values and `out` be valid.
 */
int32_t haspn_psnr(const double *sr,
                   const double *hr,
                   size_t height,
                   size_t width,
                   double peak,
                   double *out);

/**
 * Structural similarity with the default constants and an 11x11, sigma 1.5
 * window. `mode` is [`HASPN_SSIM_GLOBAL`] or [`HASPN_SSIM_WINDOWED`].
 *
 * # Safety
 * `sr` and `hr` must hold `height * width` values and `out` be valid.
 */
int32_t haspn_ssim(const double *sr,
                   const double *hr,
                   size_t height,
                   size_t width,
                   int32_t mode,
                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HASPN_H */
