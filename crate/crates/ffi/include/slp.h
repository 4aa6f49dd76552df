#ifndef SLP_H
#define SLP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlpStatus {
  SLP_STATUS_OK = 0,
  SLP_STATUS_NULL_POINTER = 1,
  SLP_STATUS_INVALID_UTF8 = 2,
  SLP_STATUS_PARSE = 3,
  SLP_STATUS_IO = 4,
  SLP_STATUS_OUT_OF_RANGE = 5,
  SLP_STATUS_INVALID_ARGUMENT = 6,
  SLP_STATUS_NO_PATH = 7,
  SLP_STATUS_PANIC = 99,
} SlpStatus;

/*
 Parsed sentences.
 */
typedef struct SlpCorpus SlpCorpus;

/*
 A trained per-relation classifier.
 */
typedef struct SlpModel SlpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *slp_last_error(void);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void slp_string_free(char *s);

/*
 Parses CoNLL text into a corpus handle.

 # Safety
 `text` must be a nul-terminated string; `out` must be writable.
 */
enum SlpStatus slp_corpus_parse(const char *text, struct SlpCorpus **out);

/*
 Loads a CoNLL file into a corpus handle.

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum SlpStatus slp_corpus_load(const char *path, struct SlpCorpus **out);

/*
 Number of sentences; 0 for a null handle.

 # Safety
 `corpus` must be null or a live handle.
 */
size_t slp_corpus_len(const struct SlpCorpus *corpus);

/*
 Number of tokens of sentence `index` (0-based).

 # Safety
 `corpus` must be a live handle; `out` must be writable.
 */
enum SlpStatus slp_corpus_sentence_len(const struct SlpCorpus *corpus, size_t index, size_t *out);

/*
 # Safety
 `corpus` must be null or a handle not yet freed.
 */
void slp_corpus_free(struct SlpCorpus *corpus);

/*
 Shortest dependency path between two inclusive 1-based token spans of
 sentence `index`. `collapse` replaces entity tokens on the path by
 their type.

 # Safety
 `corpus` must be a live handle; `out` must be writable. The string
 written to `out` is released with [`slp_string_free`].
 */
enum SlpStatus slp_sdp(const struct SlpCorpus *corpus,
                       size_t index,
                       size_t subject_first,
                       size_t subject_last,
                       size_t object_first,
                       size_t object_last,
                       bool collapse,
                       char **out);

/*
 Smoothed pattern confidence `(pos + alpha) / (neg + alpha)`.

 # Safety
 `out` must be writable.
 */
enum SlpStatus slp_confidence(size_t pos, size_t neg, double alpha, double *out);

/*
 Training-set size at step `k` of `k_max`.

 # Safety
 `out` must be writable.
 */
enum SlpStatus slp_schedule_size(size_t n_filtered,
                                 size_t n_ds,
                                 size_t k_max,
                                 size_t k,
                                 size_t *out);

/*
 Cohen's kappa of two verdict sequences over the same `n` items.
 Codes: 0 unlabeled, 1 accepted, 2 rejected.

 # Safety
 `a` and `b` must point to `n` readable bytes; `out` must be writable.
 */
enum SlpStatus slp_kappa(const uint8_t *a, const uint8_t *b, size_t n, double *out);

/*
 Loads a model file written by `slp train`.

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum SlpStatus slp_model_load(const char *path, struct SlpModel **out);

/*
 Probability that an instance with the given feature strings holds the
 model's relation. Unknown features are ignored.

 # Safety
 `model` must be a live handle; `features` must point to `n` valid
 nul-terminated strings; `out` must be writable.
 */
enum SlpStatus slp_model_predict(const struct SlpModel *model,
                                 const char *const *features,
                                 size_t n,
                                 double *out);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void slp_model_free(struct SlpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLP_H */
