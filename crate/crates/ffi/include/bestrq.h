#ifndef BESTRQ_H
#define BESTRQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 3 to 9 match the CLI exit codes.
 */
typedef enum BestrqStatus {
  BESTRQ_STATUS_OK = 0,
  BESTRQ_STATUS_NULL_ARGUMENT = 1,
  BESTRQ_STATUS_INVALID_UTF8 = 2,
  BESTRQ_STATUS_CONFIG = 3,
  BESTRQ_STATUS_IO = 4,
  BESTRQ_STATUS_FORMAT = 5,
  BESTRQ_STATUS_NUMERIC = 6,
  BESTRQ_STATUS_UNDEFINED_METRIC = 7,
  BESTRQ_STATUS_PRECONDITION = 8,
  BESTRQ_STATUS_INVALID_INPUT = 9,
  BESTRQ_STATUS_PANIC = 10,
} BestrqStatus;

/**
 * Opaque quantizer handle (random-projection or VQ-VAE).
 */
typedef struct BestrqQuantizer BestrqQuantizer;

/**
 * Outcome of comparing two timed hypothesis files.
 */
typedef struct BestrqLatencyReport {
  double relative_latency_ms;
  size_t matched_words;
  size_t utterances;
} BestrqLatencyReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful one. Valid until the next call into this library.
 */
const char *bestrq_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bestrq_version(void);

/**
 * Builds a frozen random-projection quantizer.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum BestrqStatus bestrq_rpq_new(size_t input_dim,
                                 size_t code_dim,
                                 size_t codebook_size,
                                 uint64_t seed,
                                 bool l2_normalize,
                                 struct BestrqQuantizer **out);

/**
 * Loads a quantizer file written by the CLI or [`bestrq_quantizer_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum BestrqStatus bestrq_quantizer_load(const char *path, struct BestrqQuantizer **out);

/**
 * Writes the quantizer to `path`. With `seed_only`, a random-projection
 * quantizer stores just its spec and is rebuilt from the seed on load.
 *
 * # Safety
 * `q` must come from this library and `path` be NUL-terminated.
 */
enum BestrqStatus bestrq_quantizer_save(const struct BestrqQuantizer *q,
                                        const char *path,
                                        bool seed_only);

/**
 * Width of one input frame, or 0 for a null handle.
 *
 * # Safety
 * `q` must be null or come from this library.
 */
size_t bestrq_quantizer_input_dim(const struct BestrqQuantizer *q);

/**
 * Number of labels, or 0 for a null handle.
 *
 * # Safety
 * `q` must be null or come from this library.
 */
size_t bestrq_quantizer_codebook_size(const struct BestrqQuantizer *q);

/**
 * Labels `frames` row-major frames of width `dim` (which must equal the
 * quantizer input dim). Writes one label per frame into `labels`; frames
 * that cannot be labeled get -1.
 *
 * # Safety
 * `data` must hold `frames * dim` floats and `labels` room for `frames`
 * values.
 */
enum BestrqStatus bestrq_quantizer_label_frames(const struct BestrqQuantizer *q,
                                                const float *data,
                                                size_t frames,
                                                size_t dim,
                                                int64_t *labels);

/**
 * Releases a quantizer handle. Null is accepted and ignored.
 *
 * # Safety
 * `q` must be null or a handle from this library not yet freed.
 */
void bestrq_quantizer_free(struct BestrqQuantizer *q);

/**
 * Mean start-time difference (compared minus baseline) over words that
 * align between two hypothesis JSONL files.
 *
 * # Safety
 * Both paths must be NUL-terminated and `out` writable.
 */
enum BestrqStatus bestrq_latency_compare(const char *base_path,
                                         const char *comp_path,
                                         struct BestrqLatencyReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BESTRQ_H */
