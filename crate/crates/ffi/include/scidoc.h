#ifndef SCIDOC_H
#define SCIDOC_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Group granularity selector.
 */
typedef enum ScidocGroupKind {
  SCIDOC_GROUP_KIND_LINE = 0,
  SCIDOC_GROUP_KIND_BLOCK = 1,
} ScidocGroupKind;

/**
 * Result of every fallible call.
 */
typedef enum ScidocStatus {
  SCIDOC_STATUS_OK = 0,
  SCIDOC_STATUS_NULL_POINTER = 1,
  SCIDOC_STATUS_INVALID_UTF8 = 2,
  SCIDOC_STATUS_IO = 3,
  SCIDOC_STATUS_PARSE = 4,
  SCIDOC_STATUS_INVALID_INPUT = 5,
  SCIDOC_STATUS_CONFIG = 6,
  SCIDOC_STATUS_MODEL = 7,
  SCIDOC_STATUS_BUFFER_TOO_SMALL = 8,
  SCIDOC_STATUS_OUT_OF_RANGE = 9,
  SCIDOC_STATUS_PANIC = 10,
} ScidocStatus;

/**
 * Opaque collection of labelled pages.
 */
typedef struct ScidocDataset ScidocDataset;

/**
 * Opaque trained model of any method.
 */
typedef struct ScidocModel ScidocModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *scidoc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *scidoc_version(void);

/**
 * Load a JSONL page file with a built-in label set (for example "default15").
 *
 * # Safety
 * `path` and `label_set` must be NUL-terminated strings; `out` must be writable.
 */
enum ScidocStatus scidoc_dataset_load(const char *path,
                                      const char *label_set,
                                      struct ScidocDataset **out);

/**
 * Generate a synthetic corpus with default settings apart from the seed
 * and the paper count.
 *
 * # Safety
 * `out` must be writable.
 */
enum ScidocStatus scidoc_dataset_generate(uint64_t seed,
                                          size_t n_papers,
                                          struct ScidocDataset **out);

/**
 * # Safety
 * `ds` must come from this library and not be used afterwards.
 */
void scidoc_dataset_free(struct ScidocDataset *ds);

/**
 * Number of pages, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t scidoc_dataset_page_count(const struct ScidocDataset *ds);

/**
 * Token count of one page.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ScidocStatus scidoc_dataset_token_count(const struct ScidocDataset *ds,
                                             size_t page,
                                             size_t *out);

/**
 * Copy the gold label ids of one page into `labels`. `written` receives the
 * token count; with a short buffer nothing is copied and the status is
 * `BUFFER_TOO_SMALL`.
 *
 * # Safety
 * `labels` must hold `capacity` entries; `written` must be writable.
 */
enum ScidocStatus scidoc_dataset_gold_labels(const struct ScidocDataset *ds,
                                             size_t page,
                                             uint32_t *labels,
                                             size_t capacity,
                                             size_t *written);

/**
 * Load a checkpoint written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScidocStatus scidoc_model_load(const char *path, struct ScidocModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void scidoc_model_free(struct ScidocModel *model);

/**
 * Predict one label id per token of a page, with the same buffer contract
 * as [`scidoc_dataset_gold_labels`].
 *
 * # Safety
 * Handles must be live; `labels` must hold `capacity` entries.
 */
enum ScidocStatus scidoc_model_predict(const struct ScidocModel *model,
                                       const struct ScidocDataset *ds,
                                       size_t page,
                                       uint32_t *labels,
                                       size_t capacity,
                                       size_t *written);

/**
 * Macro F1 in [0, 1] over `n` aligned predictions and gold ids drawn from
 * `n_classes` classes; classes absent from gold are left out of the mean.
 *
 * # Safety
 * `pred` and `gold` must hold `n` entries; `out` must be writable.
 */
enum ScidocStatus scidoc_macro_f1(const uint32_t *pred,
                                  const uint32_t *gold,
                                  size_t n,
                                  size_t n_classes,
                                  double *out);

/**
 * Mean group entropy ×100 of `pred` over the stored groups of one page.
 *
 * # Safety
 * `ds` must be live; `pred` must hold `n` entries; `out` must be writable.
 */
enum ScidocStatus scidoc_group_inconsistency(const struct ScidocDataset *ds,
                                             size_t page,
                                             enum ScidocGroupKind kind,
                                             const uint32_t *pred,
                                             size_t n,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCIDOC_H */
