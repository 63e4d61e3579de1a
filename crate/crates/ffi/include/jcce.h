#ifndef JCCE_H
#define JCCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped whenever a signature in this file changes.
 */
#define JCCE_ABI_VERSION 1

typedef enum JcceStatus {
  JCCE_STATUS_OK = 0,
  JCCE_STATUS_NULL_POINTER = 1,
  JCCE_STATUS_INVALID_UTF8 = 2,
  JCCE_STATUS_IO = 3,
  JCCE_STATUS_BAD_MODEL_FILE = 4,
  JCCE_STATUS_UNKNOWN_ATTRIBUTE = 5,
  JCCE_STATUS_UNENCODABLE = 6,
  JCCE_STATUS_INVALID_ARGUMENT = 7,
  JCCE_STATUS_BUFFER_TOO_SMALL = 8,
  JCCE_STATUS_INTERNAL = 9,
} JcceStatus;

/**
 * A loaded model with precomputed content embeddings.
 */
typedef struct JcceHandle JcceHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t jcce_abi_version(void);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `jcce_*` call on the same thread.
 */
const char *jcce_last_error(void);

/**
 * Loads a model file and writes a new handle to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum JcceStatus jcce_model_load(const char *path, struct JcceHandle **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `handle` must come from [`jcce_model_load`] and not be freed twice.
 */
void jcce_model_free(struct JcceHandle *handle);

/**
 * Number of items in the model's catalog (0 for a null handle).
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t jcce_catalog_size(const struct JcceHandle *handle);

/**
 * Copies the NUL-terminated name of catalog item `index` into `buf`.
 * `*needed` receives the required size including the terminator, so a
 * call with `buf_len = 0` queries the size.
 *
 * # Safety
 * `handle` must be live; `buf` must hold `buf_len` bytes; `needed` may be
 * null.
 */
enum JcceStatus jcce_content_id(const struct JcceHandle *handle,
                                size_t index,
                                char *buf,
                                size_t buf_len,
                                size_t *needed);

/**
 * Ranks the catalog for a context given as `n_attrs` parallel name/value
 * strings (multi-valued attributes separate members with `|`). Writes up to
 * `capacity` results, best first, into `out_ids` (catalog indices) and
 * `out_scores` (cosine similarities), and their count into `*out_len`.
 *
 * # Safety
 * `names` and `values` must each point to `n_attrs` NUL-terminated strings;
 * `out_ids` and `out_scores` must hold `capacity` elements.
 */
enum JcceStatus jcce_recommend(const struct JcceHandle *handle,
                               const char *const *names,
                               const char *const *values,
                               size_t n_attrs,
                               size_t capacity,
                               size_t *out_ids,
                               double *out_scores,
                               size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JCCE_H */
