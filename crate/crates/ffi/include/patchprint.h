#ifndef PATCHPRINT_H
#define PATCHPRINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Scoring pipeline selector.
 */
typedef enum PpScoreMode {
  PP_SCORE_MODE_SSP = 0,
  PP_SCORE_MODE_ESSP = 1,
} PpScoreMode;

/**
 * Result codes.
 */
typedef enum PpStatus {
  PP_STATUS_OK = 0,
  PP_STATUS_NULL_POINTER = 1,
  PP_STATUS_INVALID_ARGUMENT = 2,
  PP_STATUS_IO = 3,
  PP_STATUS_FORMAT = 4,
  PP_STATUS_MODEL = 5,
  PP_STATUS_PANIC = 6,
} PpStatus;

/**
 * Opaque detector handle.
 */
typedef struct PpDetector PpDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *pp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pp_version(void);

/**
 * Loads a checkpoint. On success `*out` owns a handle to release with
 * [`pp_detector_free`]; on failure it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PpStatus pp_detector_load(const char *path, struct PpDetector **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `det` must be null or a handle from [`pp_detector_load`] not yet freed.
 */
void pp_detector_free(struct PpDetector *det);

/**
 * Whether the handle carries the enhancement front end needed by
 * `PP_SCORE_MODE_ESSP`.
 *
 * # Safety
 * `det` must be a live handle and `out` writable.
 */
enum PpStatus pp_detector_has_front(const struct PpDetector *det, bool *out);

/**
 * Probability that the image file at `path` is real. `mode` is a
 * [`PpScoreMode`] value.
 *
 * # Safety
 * `det` must be a live handle, `path` a NUL-terminated string and `out`
 * writable.
 */
enum PpStatus pp_detector_score_file(const struct PpDetector *det,
                                     const char *path,
                                     uint32_t mode,
                                     float *out);

/**
 * Probability that an 8-bit interleaved image (row-major, 1 or 3 channels)
 * is real.
 *
 * # Safety
 * `det` must be a live handle, `pixels` must hold
 * `height * width * channels` bytes and `out` must be writable.
 */
enum PpStatus pp_detector_score_pixels(const struct PpDetector *det,
                                       const uint8_t *pixels,
                                       size_t height,
                                       size_t width,
                                       size_t channels,
                                       uint32_t mode,
                                       float *out);

/**
 * Texture diversity of an interleaved `m * m * channels` float patch, in
 * the units of its values.
 *
 * # Safety
 * `values` must hold `m * m * channels` floats and `out` must be writable.
 */
enum PpStatus pp_texture_diversity(const float *values, size_t m, size_t channels, double *out);

/**
 * Writes the three residual planes (channel-major, `3 * height * width`
 * floats) of an 8-bit interleaved image into `out`.
 *
 * # Safety
 * `pixels` must hold `height * width * channels` bytes and `out` must have
 * room for `out_len` floats.
 */
enum PpStatus pp_srm_fingerprint(const uint8_t *pixels,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 float *out,
                                 size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHPRINT_H */
