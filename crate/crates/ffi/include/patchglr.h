#ifndef PATCHGLR_H
#define PATCHGLR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PglrStatus {
  PGLR_STATUS_OK = 0,
  PGLR_STATUS_NULL_POINTER = 1,
  PGLR_STATUS_INVALID_INPUT = 2,
  PGLR_STATUS_DIMENSION_MISMATCH = 3,
  PGLR_STATUS_DOMAIN = 4,
  PGLR_STATUS_DEGENERATE_ATOM = 5,
  PGLR_STATUS_CONVERGENCE = 6,
  PGLR_STATUS_FORMAT = 7,
  PGLR_STATUS_IO = 8,
  PGLR_STATUS_PANIC = 9,
} PglrStatus;

typedef enum PglrCriterion {
  PGLR_CRITERION_CORRELATION = 0,
  PGLR_CRITERION_GLR = 1,
  PGLR_CRITERION_STABILIZED_CORRELATION = 2,
  PGLR_CRITERION_STABILIZED_GLR = 3,
} PglrCriterion;

typedef enum PglrNoiseKind {
  PGLR_NOISE_KIND_GAUSSIAN = 0,
  PGLR_NOISE_KIND_GAMMA = 1,
  PGLR_NOISE_KIND_POISSON = 2,
} PglrNoiseKind;

/**
 * Opaque dictionary handle.
 */
typedef struct PglrDictionary PglrDictionary;

/**
 * `param` is sigma for Gaussian noise, the number of looks for gamma
 * noise and ignored for Poisson noise.
 */
typedef struct PglrNoiseModel {
  enum PglrNoiseKind kind;
  double param;
} PglrNoiseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pglr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pglr_version(void);

/**
 * Builds a dictionary from `count` atoms of `width * height` values each,
 * stored contiguously in row-major order.
 *
 * # Safety
 * `values` must point to `count * width * height` doubles and `out` must
 * be writable.
 */
enum PglrStatus pglr_dictionary_from_atoms(const double *values,
                                           size_t count,
                                           size_t width,
                                           size_t height,
                                           struct PglrDictionary **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum PglrStatus pglr_dictionary_load(const char *path_, struct PglrDictionary **out);

/**
 * # Safety
 * `d` must be a live handle and `path` a NUL-terminated string.
 */
enum PglrStatus pglr_dictionary_save(const struct PglrDictionary *d, const char *path_);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `d` must come from this library and not be used afterwards.
 */
void pglr_dictionary_free(struct PglrDictionary *d);

/**
 * Number of atoms, or 0 for NULL.
 *
 * # Safety
 * `d` must be NULL or a live handle.
 */
size_t pglr_dictionary_count(const struct PglrDictionary *d);

/**
 * # Safety
 * `d` must be a live handle; `width` and `height` writable.
 */
enum PglrStatus pglr_dictionary_patch_size(const struct PglrDictionary *d,
                                           size_t *width,
                                           size_t *height);

/**
 * Copies atom `index` into `out`, which holds `len` doubles.
 *
 * # Safety
 * `d` must be a live handle and `out` must hold `len` doubles.
 */
enum PglrStatus pglr_dictionary_atom(const struct PglrDictionary *d,
                                     size_t index,
                                     double *out,
                                     size_t len);

/**
 * Scores `x` against `a` (both of length `n`). Higher is a better match.
 * `neg_log_glr` may be NULL; it receives NaN for correlation criteria.
 *
 * # Safety
 * `x` and `a` must hold `n` doubles; `value` must be writable.
 */
enum PglrStatus pglr_score(enum PglrCriterion criterion,
                           struct PglrNoiseModel model,
                           const double *x,
                           const double *a,
                           size_t n,
                           double *value,
                           double *neg_log_glr);

/**
 * Index and score of the best atom for `x`; ties go to the lowest index.
 *
 * # Safety
 * `x` must hold `n` doubles, `d` must be a live handle, outputs writable.
 */
enum PglrStatus pglr_best_match(enum PglrCriterion criterion,
                                struct PglrNoiseModel model,
                                const double *x,
                                size_t n,
                                const struct PglrDictionary *d,
                                size_t *index,
                                double *value);

/**
 * Maximum-likelihood contrast change mapping `a` onto `x`: affine for
 * Gaussian noise (`alpha * a + beta`), log-affine otherwise
 * (`beta * a^alpha`).
 *
 * # Safety
 * `x` and `a` must hold `n` doubles; outputs must be writable.
 */
enum PglrStatus pglr_fit(struct PglrNoiseModel model,
                         const double *x,
                         const double *a,
                         size_t n,
                         double *alpha,
                         double *beta);

/**
 * Posterior-mean estimate of the patch `x` (length `n`) written to `out`.
 * `criterion` must be `Glr` or `StabilizedGlr`.
 *
 * # Safety
 * `x` and `out` must hold `n` doubles and `d` must be a live handle.
 */
enum PglrStatus pglr_denoise_patch(struct PglrNoiseModel model,
                                   enum PglrCriterion criterion,
                                   double temperature,
                                   const double *x,
                                   size_t n,
                                   const struct PglrDictionary *d,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHGLR_H */
