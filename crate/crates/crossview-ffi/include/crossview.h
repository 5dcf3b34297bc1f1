#ifndef CROSSVIEW_H
#define CROSSVIEW_H

/* Generated by cbindgen from crossview-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of fallible calls.
 */
typedef enum CrossviewStatus {
  CROSSVIEW_STATUS_OK = 0,
  CROSSVIEW_STATUS_NULL_ARGUMENT = 1,
  CROSSVIEW_STATUS_INVALID_UTF8 = 2,
  CROSSVIEW_STATUS_BUFFER_TOO_SMALL = 3,
  CROSSVIEW_STATUS_FAILURE = 4,
} CrossviewStatus;

/**
 * Which encoder branch an image feeds.
 */
typedef enum CrossviewView {
  CROSSVIEW_VIEW_GROUND = 0,
  CROSSVIEW_VIEW_AERIAL = 1,
} CrossviewView;

/**
 * Manifest layouts accepted by [`crossview_eval_manifest`].
 */
typedef enum CrossviewManifestFormat {
  CROSSVIEW_MANIFEST_FORMAT_CVUSA_CSV = 0,
  CROSSVIEW_MANIFEST_FORMAT_DIRECTORY_PAIRS = 1,
  CROSSVIEW_MANIFEST_FORMAT_VIGOR_JSON = 2,
} CrossviewManifestFormat;

/**
 * Opaque handle to a loaded model checkpoint.
 */
typedef struct CrossviewModel CrossviewModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread, or NULL when none.
 * The pointer stays valid until the next failing call on the thread.
 */
const char *crossview_last_error(void);

/**
 * Load a trained checkpoint archive. Returns NULL on failure; free the
 * handle with [`crossview_model_free`].
 *
 * # Safety
 * `path` must be NULL or a valid NUL-terminated C string.
 */
struct CrossviewModel *crossview_model_load(const char *path);

/**
 * # Safety
 * `model` must be a pointer previously returned by
 * [`crossview_model_load`] and not yet freed.
 */
void crossview_model_free(struct CrossviewModel *model);

/**
 * Length of the retrieval embedding produced by this model; 0 when
 * `model` is NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle from [`crossview_model_load`].
 */
uintptr_t crossview_embedding_dim(const struct CrossviewModel *model);

/**
 * Whether the checkpoint was trained with the aerial polar preprocessing.
 *
 * # Safety
 * `model` must be NULL or a live handle from [`crossview_model_load`].
 */
bool crossview_uses_polar(const struct CrossviewModel *model);

/**
 * Embed one image file into `out` (length `out_len`, at least the
 * embedding dimension). Aerial images get the checkpoint's polar
 * preprocessing automatically.
 *
 * # Safety
 * `model` must be a live handle from [`crossview_model_load`]; `out` must
 * point to at least `out_len` writable floats.
 */
enum CrossviewStatus crossview_embed_image(const struct CrossviewModel *model,
                                           const char *image_path,
                                           enum CrossviewView view,
                                           float *out,
                                           uintptr_t out_len);

/**
 * Evaluate a manifest with this model and return the metrics report as a
 * JSON string in `out_json` (free it with [`crossview_string_free`]).
 *
 * # Safety
 * `model` must be a live handle; `out_json` must be a valid pointer.
 */
enum CrossviewStatus crossview_eval_manifest(const struct CrossviewModel *model,
                                             const char *manifest_path,
                                             enum CrossviewManifestFormat format,
                                             char **out_json);

/**
 * Release a string allocated by this library.
 *
 * # Safety
 * `s` must have been returned by a crossview function and not yet freed.
 */
void crossview_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSVIEW_H */
