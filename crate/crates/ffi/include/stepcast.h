#ifndef STEPCAST_H
#define STEPCAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum ScStatus {
  ScStatus_Ok = 0,
  ScStatus_Usage = 1,
  ScStatus_Data = 2,
  ScStatus_Numeric = 3,
} ScStatus;

/**
 * Opaque grammar handle.
 */
typedef struct ScGrammar ScGrammar;

/**
 * Opaque model handle (a full checkpoint: parameters, frozen encoders,
 * grammar, configuration).
 */
typedef struct ScModel ScModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed.
 */
const char *sc_version(void);

/**
 * Message of the last error on this thread; valid until the next failing
 * call. Never freed by the caller.
 */
const char *sc_last_error(void);

/**
 * Frees a string returned through an out-parameter.
 *
 * # Safety
 * `s` must have been produced by this library and not freed before.
 */
void sc_string_free(char *s);

/**
 * The built-in desk-scale grammar.
 */
struct ScGrammar *sc_grammar_desk(void);

/**
 * Loads a grammar document; returns null on failure (see `sc_last_error`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct ScGrammar *sc_grammar_load(const char *path);

/**
 * # Safety
 * `g` must come from `sc_grammar_desk`/`sc_grammar_load` and not be freed twice.
 */
void sc_grammar_free(struct ScGrammar *g);

/**
 * Validates every grammar invariant.
 *
 * # Safety
 * `g` must be a live grammar handle.
 */
enum ScStatus sc_grammar_validate(const struct ScGrammar *g);

/**
 * Samples `n` procedures with the given seed and writes them as a corpus
 * file.
 *
 * # Safety
 * `g` must be a live grammar handle; `out_path` a valid string.
 */
enum ScStatus sc_generate_corpus(const struct ScGrammar *g,
                                 uint64_t n,
                                 uint64_t seed,
                                 const char *out_path);

/**
 * Loads a training checkpoint; returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct ScModel *sc_model_load(const char *path);

/**
 * # Safety
 * `m` must come from `sc_model_load` and not be freed twice.
 */
void sc_model_free(struct ScModel *m);

/**
 * Predicts next-step candidates for one observed context.
 *
 * `context_json` is a single corpus record (`recipe_type`, `ingredients`,
 * `steps`); its steps are all treated as observed. `k < 1` selects the
 * deterministic single prediction (the prior mean), `k >= 1` draws k
 * samples. The result is a JSON array of candidates written to `out_json`
 * (free with `sc_string_free`).
 *
 * # Safety
 * `m` must be a live model handle; `context_json` a valid string; `out_json`
 * a valid out-pointer.
 */
enum ScStatus sc_model_predict_json(const struct ScModel *m,
                                    const char *context_json,
                                    int modality,
                                    int64_t k,
                                    uint64_t seed,
                                    char **out_json);

/**
 * Evaluates a model on a corpus file and writes the metrics report JSON to
 * `out_json` (free with `sc_string_free`). `k < 1` selects single mode.
 *
 * # Safety
 * `m` must be a live model handle; `corpus_path` a valid string; `out_json`
 * a valid out-pointer.
 */
enum ScStatus sc_model_eval_corpus(const struct ScModel *m,
                                   const char *corpus_path,
                                   int modality,
                                   int64_t k,
                                   uint64_t corpus_seed,
                                   char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEPCAST_H */
