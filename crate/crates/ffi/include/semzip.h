#ifndef SEMZIP_H
#define SEMZIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SemzipStatus {
  SEMZIP_STATUS_OK = 0,
  // A required pointer argument was NULL.
  SEMZIP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SEMZIP_STATUS_INVALID_UTF8 = 2,
  // An argument was well-formed but not acceptable (unknown regime,
  // threshold out of range, invalid atom, ...).
  SEMZIP_STATUS_INVALID_ARGUMENT = 3,
  // Input text or JSON could not be parsed.
  SEMZIP_STATUS_PARSE = 4,
  // Atoms could not be expressed in the requested representation.
  SEMZIP_STATUS_RENDER = 5,
  // A vocabulary file could not be read or did not match its hash.
  SEMZIP_STATUS_VOCABULARY = 6,
  // A Rust panic was caught at the boundary; this is a bug.
  SEMZIP_STATUS_INTERNAL = 7,
} SemzipStatus;

// Opaque codec handle (alias table plus grammar tables).
typedef struct SemzipCodec SemzipCodec;

// Opaque tokenizer vocabulary handle.
typedef struct SemzipVocab SemzipVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string.
const char *semzip_version(void);

// Message for the calling thread's last failure, or NULL after a success.
// Valid until the thread's next call into this library; do not free.
const char *semzip_last_error(void);

// Releases a string returned through an `out` parameter.
//
// # Safety
// `s` must be NULL or a pointer obtained from this library, freed once.
void semzip_string_free(char *s);

// A codec with the built-in alias table.
struct SemzipCodec *semzip_codec_new(void);

// A codec whose alias table is parsed from `aliases` (an `aliases/1` document).
//
// # Safety
// `aliases` must be a valid C string; `out` must be writable.
enum SemzipStatus semzip_codec_with_aliases(const char *aliases, struct SemzipCodec **out);

// # Safety
// `codec` must be NULL or a handle from this library, freed once.
void semzip_codec_free(struct SemzipCodec *codec);

// Renders `atoms_json` into `regime` (`prose`, `canonical_structured`,
// `ccl_core`, `ccl_min`, `szip_ascii`, `szip_emoji`).
//
// # Safety
// Pointer arguments must be valid; `out` receives a string to free with
// [`semzip_string_free`].
enum SemzipStatus semzip_render(const struct SemzipCodec *codec,
                                const char *atoms_json,
                                const char *regime,
                                char **out);

// Parses a symbolic payload (`ccl_core`, `ccl_min` or `szip_ascii`) back into
// an `{"atoms": [...]}` document.
//
// # Safety
// As for [`semzip_render`].
enum SemzipStatus semzip_parse(const struct SemzipCodec *codec,
                               const char *payload,
                               const char *regime,
                               char **out);

// Builds a hybrid `@SAFE{...}` / `@SZIP{...}` packet.
//
// # Safety
// As for [`semzip_render`].
enum SemzipStatus semzip_packet(const struct SemzipCodec *codec,
                                const char *atoms_json,
                                char **out);

// Matches decoded atoms against gold atoms at `threshold` with the default
// similarity weights; `out` receives the match report as JSON.
//
// # Safety
// As for [`semzip_render`].
enum SemzipStatus semzip_score(const struct SemzipCodec *codec,
                               const char *gold_json,
                               const char *decoded_json,
                               double threshold,
                               char **out);

// Loads a standard vocabulary (`o200k_base` or `cl100k_base`) from its rank
// file, checking the file's published SHA-256.
//
// # Safety
// String arguments must be valid C strings; `out` must be writable.
enum SemzipStatus semzip_vocab_load(const char *name,
                                    const char *rank_file,
                                    struct SemzipVocab **out);

// # Safety
// `vocab` must be NULL or a handle from this library, freed once.
void semzip_vocab_free(struct SemzipVocab *vocab);

// Number of tokens in `text`.
//
// # Safety
// Pointer arguments must be valid.
enum SemzipStatus semzip_vocab_count(const struct SemzipVocab *vocab,
                                     const char *text,
                                     size_t *out);

// Token gain `1 - compressed/original` of `compressed` relative to `original`.
//
// # Safety
// Pointer arguments must be valid.
enum SemzipStatus semzip_token_gain(const struct SemzipVocab *vocab,
                                    const char *original,
                                    const char *compressed,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMZIP_H */
