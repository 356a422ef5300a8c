#ifndef EQUITYGUARD_H
#define EQUITYGUARD_H

/* Generated by cbindgen from equityguard-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum EgStatus {
  EG_STATUS_OK = 0,
  EG_STATUS_INTERNAL_ERROR = 1,
  EG_STATUS_INVALID_ARGUMENT = 2,
  EG_STATUS_PARSE_ERROR = 3,
  EG_STATUS_NOT_FOUND = 4,
} EgStatus;

// Opaque lexicon handle.
typedef struct EgLexicon EgLexicon;

// Opaque embedding-model handle.
typedef struct EgModel EgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message for this thread, or null when the previous call
// succeeded. The pointer stays valid until the next failing call.
const char *eg_last_error_message(void);

// Free a string returned by this library.
void eg_string_free(char *s);

// Load the embedded default lexicon. Returns null on failure.
struct EgLexicon *eg_lexicon_default(void);

// Load a lexicon from a JSON file path. Returns null on failure.
//
// # Safety
// `path` must be a valid NUL-terminated UTF-8 string.
struct EgLexicon *eg_lexicon_load(const char *path);

// # Safety
// `lexicon` must be a pointer returned by this library, freed once.
void eg_lexicon_free(struct EgLexicon *lexicon);

// Detect SDOH attribute spans; `out_json` receives a JSON array of
// `{category, start, end, text}` objects.
//
// # Safety
// `lexicon` must be a live handle; `text` a valid C string; `out_json` a
// valid destination pointer.
enum EgStatus eg_detect_attributes(const struct EgLexicon *lexicon,
                                   const char *text,
                                   char **out_json);

// Neutralize a text: every detected attribute replaced by its neutral form.
//
// # Safety
// See [`eg_detect_attributes`].
enum EgStatus eg_neutralize(const struct EgLexicon *lexicon, const char *text, char **out_text);

// Inject a category descriptor into a neutral text. `category` is the
// snake_case key (for example `low_income`).
//
// # Safety
// See [`eg_detect_attributes`].
enum EgStatus eg_inject(const struct EgLexicon *lexicon,
                        const char *text,
                        const char *category,
                        uint64_t seed,
                        char **out_text);

// NDCG@k for a ranking against qrels lines (`topic 0 trial grade`, one per
// `\n`). `ranking_json` is a JSON array of trial-id strings.
//
// # Safety
// All pointer arguments must be valid C strings / destinations.
enum EgStatus eg_ndcg_at_k(const char *ranking_json,
                           const char *qrels_text,
                           const char *topic,
                           uintptr_t k,
                           double *out_value);

// Triplet loss max(0, margin + d(a,p) - d(a,n)) over raw unit vectors.
//
// # Safety
// The three vector pointers must reference `dim` readable doubles each.
enum EgStatus eg_triplet_loss(const double *anchor,
                              const double *positive,
                              const double *negative,
                              uintptr_t dim,
                              double margin,
                              double *out_value);

// Create a fresh embedding model with seeded deterministic parameters.
struct EgModel *eg_model_new(uintptr_t vocab_dim, uintptr_t embed_dim, uint64_t seed);

// Load a model checkpoint written by the trainer.
//
// # Safety
// `path` must be a valid NUL-terminated UTF-8 string.
struct EgModel *eg_model_load(const char *path);

// Embedding dimension of a model handle.
//
// # Safety
// `model` must be a live handle.
uintptr_t eg_model_dim(const struct EgModel *model);

// Embed a text into `out` (length `dim` as returned by [`eg_model_dim`]).
//
// # Safety
// `model` must be a live handle, `text` a valid C string, and `out` must
// have space for the model's embedding dimension.
enum EgStatus eg_model_embed(const struct EgModel *model,
                             const char *text,
                             double *out,
                             uintptr_t out_len);

// # Safety
// `model` must be a pointer returned by this library, freed once.
void eg_model_free(struct EgModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EQUITYGUARD_H */
