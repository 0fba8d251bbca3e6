#ifndef LOUPE_H
#define LOUPE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result codes shared by every fallible function.
typedef enum LoupeStatus {
  LOUPE_STATUS_OK = 0,
  // A required pointer was null or a string was not valid UTF-8.
  LOUPE_STATUS_INVALID_ARGUMENT = 1,
  LOUPE_STATUS_PARSE = 2,
  LOUPE_STATUS_DIMENSION_MISMATCH = 3,
  LOUPE_STATUS_NOT_FOUND = 4,
  LOUPE_STATUS_NOT_IN_POOL = 5,
  LOUPE_STATUS_PROVIDER_UNAVAILABLE = 6,
  LOUPE_STATUS_PROVIDER = 7,
  LOUPE_STATUS_IO = 8,
  // Any other validation failure (bad limits, empty queries, config).
  LOUPE_STATUS_DOMAIN = 9,
  LOUPE_STATUS_PANIC = 10,
} LoupeStatus;

// An immutable embedding corpus.
typedef struct LoupeCorpus LoupeCorpus;

// A feedback session bound to the corpus it was started on.
typedef struct LoupeSession LoupeSession;

// Loads a JSONL or binary store, with labels from `<path>.labels.csv` if
// present.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LoupeStatus loupe_corpus_load(const char *path, struct LoupeCorpus **out);

// Number of records, or 0 for a null handle.
//
// # Safety
// `corpus` must be null or a live handle.
size_t loupe_corpus_len(const struct LoupeCorpus *corpus);

// Embedding dimension, or 0 for a null handle.
//
// # Safety
// `corpus` must be null or a live handle.
size_t loupe_corpus_dimension(const struct LoupeCorpus *corpus);

// Sessions keep their own reference, so the corpus may be freed first.
//
// # Safety
// `corpus` must be null or a handle not yet freed.
void loupe_corpus_free(struct LoupeCorpus *corpus);

// Starts a session from a text query encoded with the deterministic stub
// encoder.
//
// # Safety
// `corpus` must be a live handle, `text` NUL-terminated, `out` writable.
enum LoupeStatus loupe_session_start_text(const struct LoupeCorpus *corpus,
                                          const char *text,
                                          bool prefix_enabled,
                                          uint64_t stub_seed,
                                          size_t retrieval_limit,
                                          struct LoupeSession **out);

// Starts a session whose query is the stored vector of `image_id`.
//
// # Safety
// `corpus` must be a live handle, `image_id` NUL-terminated, `out` writable.
enum LoupeStatus loupe_session_start_image(const struct LoupeCorpus *corpus,
                                           const char *image_id,
                                           size_t retrieval_limit,
                                           struct LoupeSession **out);

// # Safety
// `session` must be null or a handle not yet freed.
void loupe_session_free(struct LoupeSession *session);

// Records `count` judgments. The batch is rejected as a whole if any id is
// outside the session's candidate pool.
//
// # Safety
// `ids` and `relevant` must point to `count` elements each; every id must
// be NUL-terminated. `accepted` may be null.
enum LoupeStatus loupe_session_feedback(struct LoupeSession *session,
                                        const char *const *ids,
                                        const bool *relevant,
                                        size_t count,
                                        size_t *accepted);

// Retrains on all judgments with default SVM settings and re-ranks the
// pool. `retrained` is set to false when feedback lacks a relevant or a
// non-relevant example; the ranking is then unchanged.
//
// # Safety
// `session` must be a live handle; `retrained` may be null.
enum LoupeStatus loupe_session_finetune(struct LoupeSession *session, bool *retrained);

// Completed feedback rounds, or 0 for a null handle.
//
// # Safety
// `session` must be null or a live handle.
uint32_t loupe_session_round(const struct LoupeSession *session);

// Length of the current ranking, or 0 for a null handle.
//
// # Safety
// `session` must be null or a live handle.
size_t loupe_session_result_count(const struct LoupeSession *session);

// Entry `index` (0-based) of the current ranking. `image_id` receives a
// newly allocated string.
//
// # Safety
// `session` must be a live handle; both outputs must be writable.
enum LoupeStatus loupe_session_result(const struct LoupeSession *session,
                                      size_t index,
                                      char **image_id,
                                      double *score);

// The last error raised on this thread as a newly allocated string, or
// null if no call has failed.
char *loupe_last_error_message(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void loupe_string_free(char *s);

#endif  /* LOUPE_H */
