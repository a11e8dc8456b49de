#ifndef WAVENET_H
#define WAVENET_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WvStatus {
  WV_STATUS_OK = 0,
  WV_STATUS_NULL_POINTER = 1,
  WV_STATUS_INVALID_ARGUMENT = 2,
  WV_STATUS_CONFIG = 3,
  WV_STATUS_DATA = 4,
  /**
   * Checkpoint corrupt, wrong version, or paired with the wrong vocabulary.
   */
  WV_STATUS_ARTIFACT = 5,
  WV_STATUS_NUMERIC = 6,
  WV_STATUS_PANIC = 7,
} WvStatus;

typedef enum WvCombineMode {
  WV_COMBINE_MODE_INTERFERENCE = 0,
  WV_COMBINE_MODE_MODULATION = 1,
} WvCombineMode;

/**
 * A loaded checkpoint with its vocabulary. Opaque to C.
 */
typedef struct WvModel WvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *wv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wv_version(void);

/**
 * Loads a checkpoint. `vocab_path` may be null, in which case the
 * vocabulary recorded in the checkpoint is read from the same directory.
 * On success `*out` owns a model that must be released with
 * [`wv_model_free`].
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum WvStatus wv_model_load(const char *checkpoint_path,
                            const char *vocab_path,
                            struct WvModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`wv_model_load`] and not be freed twice.
 */
void wv_model_free(struct WvModel *model);

/**
 * Number of output classes, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t wv_model_n_classes(const struct WvModel *model);

/**
 * Embedding width, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t wv_model_dim(const struct WvModel *model);

/**
 * Classifies one text. Writes the arg-max class to `*label` and, if
 * `probs` is non-null, the softmax probabilities to `probs[0..n_classes]`
 * (`probs_len` must be at least the class count).
 *
 * # Safety
 * `model` must be live, `text` NUL-terminated, `label` writable and
 * `probs` null or valid for `probs_len` writes.
 */
enum WvStatus wv_model_classify(const struct WvModel *model,
                                const char *text,
                                double *probs,
                                size_t probs_len,
                                size_t *label);

/**
 * Complex representation of an `n × d` row-major embedding matrix.
 * `mask` is null (every row real) or `n` bytes, nonzero for real rows.
 * Writes the global semantics to `g[0..d]` and the real and imaginary
 * planes to `re[0..n*d]`, `im[0..n*d]`.
 *
 * # Safety
 * Every non-null pointer must be valid for the stated length.
 */
enum WvStatus wv_to_complex(const double *embeddings,
                            size_t n,
                            size_t d,
                            const uint8_t *mask,
                            double *g,
                            double *re,
                            double *im);

/**
 * Combines two complex arrays of `len` values elementwise. The output
 * may alias either input.
 *
 * # Safety
 * Every pointer must be valid for `len` values.
 */
enum WvStatus wv_combine(enum WvCombineMode mode,
                         const double *re_a,
                         const double *im_a,
                         const double *re_b,
                         const double *im_b,
                         size_t len,
                         double *re_out,
                         double *im_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAVENET_H */
