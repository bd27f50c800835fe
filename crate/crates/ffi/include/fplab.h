#ifndef FPLAB_H
#define FPLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Library errors keep the codes used by the command-line tool.
 */
enum FplabStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  FPLAB_STATUS_OK = 0,
  FPLAB_STATUS_USAGE = 2,
  FPLAB_STATUS_INVALID_VALUE = 3,
  FPLAB_STATUS_SHAPE = 4,
  FPLAB_STATUS_SINGULAR = 5,
  FPLAB_STATUS_MISSING_FILE = 10,
  FPLAB_STATUS_HASH_MISMATCH = 11,
  FPLAB_STATUS_DUPLICATE_KEY = 12,
  FPLAB_STATUS_PATH_COLLISION = 13,
  FPLAB_STATUS_MANIFEST_PARSE = 14,
  FPLAB_STATUS_DIVERGENCE = 20,
  FPLAB_STATUS_UNTRAINED = 21,
  FPLAB_STATUS_INCOMPATIBLE = 22,
  FPLAB_STATUS_INSUFFICIENT = 23,
  FPLAB_STATUS_CONFIG = 30,
  FPLAB_STATUS_IO = 40,
  FPLAB_STATUS_IMAGE = 41,
  FPLAB_STATUS_TENSOR = 50,
  FPLAB_STATUS_JSON = 51,
  FPLAB_STATUS_NULL_POINTER = 90,
  FPLAB_STATUS_UTF8 = 91,
  FPLAB_STATUS_BUFFER_TOO_SMALL = 92,
  FPLAB_STATUS_PANIC = 99,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum FplabStatus FplabStatus;
#else
typedef int32_t FplabStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Trained or random generator bundle.
 */
typedef struct FplabBundle FplabBundle;

/**
 * Grayscale fingerprint image.
 */
typedef struct FplabImage FplabImage;

/**
 * Minutiae extracted from one image.
 */
typedef struct FplabMinutiae FplabMinutiae;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static name of a status code, or "unknown".
 */
const char *fplab_status_name(int32_t status);

/**
 * Message of the last failure on this thread, or NULL after a success.
 * The pointer stays valid until the next fplab call on the same thread.
 */
const char *fplab_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *fplab_version(void);

/**
 * Loads a bundle directory holding the four trained components.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
FplabStatus fplab_bundle_load(const char *dir, struct FplabBundle **out);

/**
 * Untrained bundle with deterministic random weights.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
FplabStatus fplab_bundle_random(uint64_t seed, struct FplabBundle **out);

/**
 * # Safety
 * `bundle` must be NULL or a handle from this library that is not used afterwards.
 */
void fplab_bundle_free(struct FplabBundle *bundle);

/**
 * Copies the bundle digest as a NUL-terminated hex string. `required`
 * receives the buffer size needed including the terminator.
 *
 * # Safety
 * `buf` must hold `cap` writable bytes; `required` may be NULL.
 */
FplabStatus fplab_bundle_digest(const struct FplabBundle *bundle,
                                char *buf,
                                size_t cap,
                                size_t *required);

/**
 * Generates one impression from explicit seeds for the three noise vectors.
 *
 * # Safety
 * `bundle` must be a live handle and `out` a writable pointer.
 */
FplabStatus fplab_synthesize(const struct FplabBundle *bundle,
                             uint64_t seed_id,
                             uint64_t seed_distort,
                             uint64_t seed_texture,
                             struct FplabImage **out);

/**
 * Generates the impression `imp` of identity `id` exactly as a dataset
 * synthesised with `master_seed` would contain it.
 *
 * # Safety
 * `bundle` must be a live handle and `out` a writable pointer.
 */
FplabStatus fplab_synthesize_dataset_print(const struct FplabBundle *bundle,
                                           uint64_t master_seed,
                                           uint64_t id,
                                           uint64_t imp,
                                           struct FplabImage **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
FplabStatus fplab_image_read_png(const char *path, struct FplabImage **out);

/**
 * # Safety
 * `image` must be a live handle and `path` a NUL-terminated string.
 */
FplabStatus fplab_image_write_png(const struct FplabImage *image, const char *path);

/**
 * Width in pixels, or 0 for NULL.
 *
 * # Safety
 * `image` must be NULL or a live handle.
 */
size_t fplab_image_width(const struct FplabImage *image);

/**
 * Height in pixels, or 0 for NULL.
 *
 * # Safety
 * `image` must be NULL or a live handle.
 */
size_t fplab_image_height(const struct FplabImage *image);

/**
 * Resolution in pixels per inch, or 0 for NULL.
 *
 * # Safety
 * `image` must be NULL or a live handle.
 */
uint32_t fplab_image_ppi(const struct FplabImage *image);

/**
 * Copies row-major intensities in [0, 1] (ridges dark) into `buf`.
 *
 * # Safety
 * `buf` must hold `cap` writable floats.
 */
FplabStatus fplab_image_copy_pixels(const struct FplabImage *image, float *buf, size_t cap);

/**
 * # Safety
 * `image` must be NULL or a handle from this library that is not used afterwards.
 */
void fplab_image_free(struct FplabImage *image);

/**
 * Extracts minutiae with the default settings.
 *
 * # Safety
 * `image` must be a live handle and `out` a writable pointer.
 */
FplabStatus fplab_minutiae_extract(const struct FplabImage *image, struct FplabMinutiae **out);

/**
 * Number of minutiae, or 0 for NULL.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t fplab_minutiae_count(const struct FplabMinutiae *set);

/**
 * # Safety
 * `set` must be NULL or a handle from this library that is not used afterwards.
 */
void fplab_minutiae_free(struct FplabMinutiae *set);

/**
 * Similarity in [0, 1] between two minutiae sets.
 *
 * # Safety
 * `a` and `b` must be live handles and `score` a writable pointer.
 */
FplabStatus fplab_match(const struct FplabMinutiae *a,
                        const struct FplabMinutiae *b,
                        double *score);

/**
 * One-sided two-sample KS statistic sup(F_a − F_b) and its asymptotic p-value.
 *
 * # Safety
 * `a` must hold `n` and `b` `m` readable doubles; `d` and `p` must be writable.
 */
FplabStatus fplab_ks_one_sided(const double *a,
                               size_t n,
                               const double *b,
                               size_t m,
                               double *d,
                               double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPLAB_H */
