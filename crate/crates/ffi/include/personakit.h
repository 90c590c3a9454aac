#ifndef PERSONAKIT_H
#define PERSONAKIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of the quality rules for one summary.
 */
typedef enum PkFilterReason {
  PK_FILTER_REASON_KEPT = 0,
  PK_FILTER_REASON_NONE_SUMMARY = 1,
  PK_FILTER_REASON_BAD_FORMAT = 2,
  PK_FILTER_REASON_UNKNOWN_ATTRIBUTE = 3,
  PK_FILTER_REASON_SUBJECT_TOO_LONG = 4,
  PK_FILTER_REASON_LOW_SIMILARITY = 5,
} PkFilterReason;

/**
 * NLI judgement of a response against one profile triple.
 */
typedef enum PkNliLabel {
  PK_NLI_LABEL_NEUTRAL = 0,
  PK_NLI_LABEL_ENTAIL = 1,
  PK_NLI_LABEL_CONTRADICT = 2,
} PkNliLabel;

/**
 * Result of every fallible call.
 */
typedef enum PkStatus {
  PK_STATUS_OK = 0,
  PK_STATUS_NULL_ARGUMENT = 1,
  PK_STATUS_INVALID_UTF8 = 2,
  PK_STATUS_CONFIG = 3,
  PK_STATUS_DATA = 4,
  PK_STATUS_FORMAT = 5,
  PK_STATUS_BUFFER_TOO_SMALL = 6,
  PK_STATUS_PANIC = 7,
} PkStatus;

typedef struct PkExtractor PkExtractor;

typedef struct PkFilter PkFilter;

typedef struct PkRegistry PkRegistry;

typedef struct PkVocab PkVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *pk_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void pk_string_free(char *s);

/**
 * The built-in attribute list.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PkStatus pk_registry_builtin(struct PkRegistry **out);

/**
 * Parses an attribute list, one symbol per line.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PkStatus pk_registry_parse(const char *text, struct PkRegistry **out);

/**
 * # Safety
 * All pointers must be valid.
 */
enum PkStatus pk_registry_contains(const struct PkRegistry *registry,
                                   const char *attribute,
                                   bool *out);

/**
 * # Safety
 * `registry` must come from this library and not be freed twice.
 */
void pk_registry_free(struct PkRegistry *registry);

/**
 * Pattern extractor with the built-in rules, restricted to `registry`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PkStatus pk_extractor_new(const struct PkRegistry *registry, struct PkExtractor **out);

/**
 * Summarizes one utterance as `e1 [SEP] r [SEP] e2` or `[None]`.
 *
 * # Safety
 * All pointers must be valid; free the result with [`pk_string_free`].
 */
enum PkStatus pk_extractor_extract(const struct PkExtractor *extractor,
                                   const char *utterance,
                                   char **out);

/**
 * # Safety
 * `extractor` must come from this library and not be freed twice.
 */
void pk_extractor_free(struct PkExtractor *extractor);

/**
 * Quality rules with the hashed TF-IDF similarity over `hash_dims`
 * dimensions.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PkStatus pk_filter_new(const struct PkRegistry *registry,
                            size_t max_subject_tokens,
                            double min_similarity,
                            size_t hash_dims,
                            struct PkFilter **out);

/**
 * Checks one summary against the utterance it came from. When kept and
 * `out_triple` is non-null, the normalized triple is written there;
 * otherwise it is set to null.
 *
 * # Safety
 * All non-optional pointers must be valid.
 */
enum PkStatus pk_filter_check(const struct PkFilter *filter,
                              const char *summary,
                              const char *utterance,
                              enum PkFilterReason *out_reason,
                              char **out_triple);

/**
 * # Safety
 * `filter` must come from this library and not be freed twice.
 */
void pk_filter_free(struct PkFilter *filter);

/**
 * Hashed TF-IDF cosine similarity of two texts.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PkStatus pk_similarity(const char *a, const char *b, size_t hash_dims, double *out);

/**
 * Parses a vocabulary file, one token per line.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PkStatus pk_vocab_parse(const char *text, struct PkVocab **out);

/**
 * # Safety
 * All pointers must be valid.
 */
enum PkStatus pk_vocab_size(const struct PkVocab *vocab, size_t *out);

/**
 * Token ids of `text`. Writes at most `capacity` ids to `ids` and the full
 * count to `out_len`; returns `BufferTooSmall` when they do not fit, so a
 * first call with `capacity` 0 sizes the buffer.
 *
 * # Safety
 * `ids` must hold `capacity` elements (it may be null when `capacity` is
 * 0); the other pointers must be valid.
 */
enum PkStatus pk_vocab_encode(const struct PkVocab *vocab,
                              const char *text,
                              uint32_t *ids,
                              size_t capacity,
                              size_t *out_len);

/**
 * Encodes one training example given as JSON into the model input
 * channels, returned as JSON with default encoder limits.
 *
 * # Safety
 * All pointers must be valid; free the result with [`pk_string_free`].
 */
enum PkStatus pk_vocab_encode_example(const struct PkVocab *vocab,
                                      const char *example_json,
                                      char **out_json);

/**
 * # Safety
 * `vocab` must come from this library and not be freed twice.
 */
void pk_vocab_free(struct PkVocab *vocab);

/**
 * Whether position `i` may attend to `j` in a sequence of `source_len`
 * source and `target_len` target tokens.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PkStatus pk_mask_allowed(size_t source_len, size_t target_len, size_t i, size_t j, bool *out);

/**
 * Writes the full mask row-major as 0/1 bytes; `out` must hold
 * `(source_len + target_len)^2` bytes.
 *
 * # Safety
 * `out` must hold `capacity` bytes.
 */
enum PkStatus pk_mask_fill(size_t source_len, size_t target_len, uint8_t *out, size_t capacity);

/**
 * distinct-n over the whitespace tokens of `count` responses.
 *
 * # Safety
 * `responses` must hold `count` valid strings; `out` must be valid.
 */
enum PkStatus pk_distinct_n(const char *const *responses, size_t count, size_t n, double *out);

/**
 * Consistency score of one response from its per-triple labels, given as
 * [`PkNliLabel`] codes: +1 per entailment, -1 per contradiction.
 *
 * # Safety
 * `labels` must hold `count` values; `out` must be valid.
 */
enum PkStatus pk_consistency_score(const int32_t *labels, size_t count, int64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERSONAKIT_H */
