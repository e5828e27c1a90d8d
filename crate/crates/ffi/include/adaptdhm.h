#ifndef ADAPTDHM_H
#define ADAPTDHM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AdhmStatus {
  ADHM_STATUS_OK = 0,
  ADHM_STATUS_NULL_POINTER = 1,
  ADHM_STATUS_INVALID_ARGUMENT = 2,
  ADHM_STATUS_IO = 3,
  ADHM_STATUS_FORMAT = 4,
  ADHM_STATUS_MODEL = 5,
  ADHM_STATUS_NON_FINITE = 6,
  ADHM_STATUS_NOT_ADAPTDHM = 7,
  ADHM_STATUS_METRIC = 8,
  ADHM_STATUS_BUFFER_TOO_SMALL = 9,
  ADHM_STATUS_PANIC = 10,
} AdhmStatus;

// Opaque model handle.
typedef struct AdhmModel AdhmModel;

// Message of the last failed call on this thread, or null. Release the
// string with `adhm_string_free`.
char *adhm_last_error_message(void);

// # Safety
// `s` must come from this library or be null.
void adhm_string_free(char *s);

// Creates a freshly initialized model with the default configuration.
// `kind` is one of `adaptdhm`, `dnn`, `shared_bottom`, `star_by_domain`;
// `vocab_sizes` holds one vocabulary size per feature field.
//
// # Safety
// Pointers must be valid for the given lengths; `out` receives the handle.
enum AdhmStatus adhm_model_new(const char *kind,
                               const uint32_t *vocab_sizes,
                               size_t num_fields,
                               size_t num_clusters,
                               size_t num_domains,
                               uint64_t seed,
                               struct AdhmModel **out);

// # Safety
// `path` must be a NUL-terminated string; `out` receives the handle.
enum AdhmStatus adhm_model_load(const char *path, struct AdhmModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum AdhmStatus adhm_model_save(const struct AdhmModel *model, const char *path);

// # Safety
// `model` must come from `adhm_model_new`/`adhm_model_load` or be null,
// and must not be used afterwards.
void adhm_model_free(struct AdhmModel *model);

// Model kind as a static string, or null for a null handle.
//
// # Safety
// `model` must be a live handle or null.
const char *adhm_model_kind(const struct AdhmModel *model);

// Number of feature fields each instance must carry, or 0 for null.
//
// # Safety
// `model` must be a live handle or null.
size_t adhm_model_num_fields(const struct AdhmModel *model);

// Number of branch groups (clusters or domains), or 0 for null.
//
// # Safety
// `model` must be a live handle or null.
size_t adhm_model_num_groups(const struct AdhmModel *model);

// Click probabilities for `n` instances into `out_probs`.
//
// # Safety
// Arrays must hold `n` instances; `out_probs` must hold `n` values.
enum AdhmStatus adhm_model_predict(const struct AdhmModel *model,
                                   const uint32_t *feature_ids,
                                   const size_t *domain_ids,
                                   size_t n,
                                   double *out_probs);

// Branch group used for each of `n` instances: the routed cluster for
// adaptdhm, the domain for domain-keyed models, 0 for dnn.
//
// # Safety
// Arrays must hold `n` instances; `out_groups` must hold `n` values.
enum AdhmStatus adhm_model_route(const struct AdhmModel *model,
                                 const uint32_t *feature_ids,
                                 const size_t *domain_ids,
                                 size_t n,
                                 size_t *out_groups);

// Copies the `K × dim` cluster centers, row-major, into `out`. The sizes
// are always written to `out_k` and `out_dim`; a short buffer returns
// `BufferTooSmall`.
//
// # Safety
// `out` must hold `capacity` values; `out_k` and `out_dim` must be valid.
enum AdhmStatus adhm_model_centers(const struct AdhmModel *model,
                                   double *out,
                                   size_t capacity,
                                   size_t *out_k,
                                   size_t *out_dim);

// One optimizer step on `n` labelled instances; the batch loss goes to
// `out_loss` (may be null). The model is unchanged on failure.
//
// # Safety
// Arrays must hold `n` instances.
enum AdhmStatus adhm_model_train_step(struct AdhmModel *model,
                                      const uint32_t *feature_ids,
                                      const size_t *domain_ids,
                                      const uint8_t *labels,
                                      size_t n,
                                      double *out_loss);

// Area under the ROC curve of `n` scores against 0/1 labels.
//
// # Safety
// `scores` and `labels` must hold `n` values; `out` must be valid.
enum AdhmStatus adhm_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Impression-weighted mean of per-session AUCs; sessions are keyed by
// `session_ids`.
//
// # Safety
// All arrays must hold `n` values; `out` must be valid.
enum AdhmStatus adhm_gauc(const double *scores,
                          const uint8_t *labels,
                          const uint64_t *session_ids,
                          size_t n,
                          double *out);

#endif  /* ADAPTDHM_H */
