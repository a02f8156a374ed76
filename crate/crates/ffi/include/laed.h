#ifndef LAED_H
#define LAED_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. The nonzero values 2 to 4 match the command-line exit codes.
 */
typedef enum {
  LAED_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  LAED_STATUS_NULL_OR_INVALID_POINTER = 1,
  /**
   * Bad configuration or argument.
   */
  LAED_STATUS_CONFIG = 2,
  /**
   * Unreadable or malformed data.
   */
  LAED_STATUS_DATA = 3,
  /**
   * Missing artifacts, I/O errors and other runtime failures.
   */
  LAED_STATUS_RUNTIME = 4,
  /**
   * The call panicked; the model handle may no longer be usable.
   */
  LAED_STATUS_PANIC = 5,
} LaedStatus;

/**
 * A loaded run. Opaque to C.
 */
typedef struct LaedModel LaedModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *laed_last_error(void);

/**
 * Loads the run directory at `run_dir` into `*out`.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated string and `out` a valid pointer.
 */
LaedStatus laed_model_load(const char *run_dir, LaedModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`laed_model_load`] and not be used afterwards.
 */
void laed_model_free(LaedModel *model);

/**
 * Writes the number of latent variables M and classes K.
 *
 * # Safety
 * All pointers must be valid.
 */
LaedStatus laed_model_shape(const LaedModel *model, uintptr_t *num_vars, uintptr_t *num_classes);

/**
 * Greedy latent code of `text`, written to `codes[0..M]`.
 *
 * # Safety
 * `codes` must have room for `capacity` values; `text` is NUL-terminated.
 */
LaedStatus laed_model_recognize(const LaedModel *model,
                                const char *text,
                                uintptr_t *codes,
                                uintptr_t capacity);

/**
 * Generates a response for a context given as utterances separated by
 * newlines. `action` is null to use the policy's most likely code, or a
 * code such as "1-4-2" to force it. The result is JSON
 * `{"action": ..., "response": ...}` in `*out`, freed with
 * [`laed_string_free`]. Needs an ae-ed or st-ed run.
 *
 * # Safety
 * `context` is NUL-terminated, `action` is null or NUL-terminated, `out`
 * is valid.
 */
LaedStatus laed_model_generate(const LaedModel *model,
                               const char *context,
                               const char *action,
                               char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void laed_string_free(char *s);

/**
 * Batch prior regularization against the uniform prior: the sum over
 * variables of KL(batch-average posterior || uniform). `probs` holds
 * `n * m * k` values, item-major, each length-`k` row a distribution.
 *
 * # Safety
 * `probs` must point to `n * m * k` doubles; `out` is valid.
 */
LaedStatus laed_batch_prior_regularization(const double *probs,
                                           uintptr_t n,
                                           uintptr_t m,
                                           uintptr_t k,
                                           double *out);

/**
 * Mutual-information estimate H(average posterior) - average H(posterior),
 * summed over variables; same layout as
 * [`laed_batch_prior_regularization`].
 *
 * # Safety
 * `probs` must point to `n * m * k` doubles; `out` is valid.
 */
LaedStatus laed_mutual_information(const double *probs,
                                   uintptr_t n,
                                   uintptr_t m,
                                   uintptr_t k,
                                   double *out);

/**
 * Homogeneity of a `classes x actions` contingency table given row-major.
 *
 * # Safety
 * `counts` must point to `classes * actions` values; `out` is valid.
 */
LaedStatus laed_homogeneity(const uint64_t *counts,
                            uintptr_t classes,
                            uintptr_t actions,
                            double *out);

/**
 * exp(total_nll / tokens).
 *
 * # Safety
 * `out` must be valid.
 */
LaedStatus laed_perplexity(double total_nll, uintptr_t tokens, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAED_H */
