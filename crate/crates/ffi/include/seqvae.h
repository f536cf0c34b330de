#ifndef SEQVAE_H
#define SEQVAE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum SeqvaeStatus {
  SEQVAE_STATUS_OK = 0,
  SEQVAE_STATUS_NULL_POINTER = 1,
  SEQVAE_STATUS_INVALID_UTF8 = 2,
  SEQVAE_STATUS_IO = 3,
  SEQVAE_STATUS_CHECKPOINT = 4,
  SEQVAE_STATUS_INVALID_ARGUMENT = 5,
  SEQVAE_STATUS_BUFFER_TOO_SMALL = 6,
  SEQVAE_STATUS_NUMERIC = 7,
  SEQVAE_STATUS_PANIC = 8,
} SeqvaeStatus;

// Opaque handle to a loaded model.
typedef struct SeqvaeModel SeqvaeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a
// success. Valid until the next call into this library on the thread.
const char *seqvae_last_error(void);

// Library version as a static NUL-terminated string.
const char *seqvae_version(void);

// Load a checkpoint written by the `seqvae` tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SeqvaeStatus seqvae_model_load(const char *path, struct SeqvaeModel **out);

// Release a model. Null is ignored.
//
// # Safety
// `model` must come from `seqvae_model_load` and not be used afterwards.
void seqvae_model_free(struct SeqvaeModel *model);

// Size of the sentence code (0 for models without one).
//
// # Safety
// `model` and `out` must be valid pointers.
enum SeqvaeStatus seqvae_model_latent_dim(const struct SeqvaeModel *model, size_t *out);

// MAP reconstruction of `sentence`, space-separated.
//
// # Safety
// Pointers must be valid; `buf` must hold `capacity` bytes.
enum SeqvaeStatus seqvae_model_reconstruct(const struct SeqvaeModel *model,
                                           const char *sentence,
                                           char *buf,
                                           size_t capacity,
                                           size_t *needed);

// Decode a code drawn from the prior with the given seed.
//
// # Safety
// Pointers must be valid; `buf` must hold `capacity` bytes.
enum SeqvaeStatus seqvae_model_sample(const struct SeqvaeModel *model,
                                      uint64_t seed,
                                      char *buf,
                                      size_t capacity,
                                      size_t *needed);

// Decode `mu + scale * sigma * eps` around `sentence`'s code.
//
// # Safety
// Pointers must be valid; `buf` must hold `capacity` bytes.
enum SeqvaeStatus seqvae_model_neighborhood(const struct SeqvaeModel *model,
                                            const char *sentence,
                                            double scale,
                                            uint64_t seed,
                                            char *buf,
                                            size_t capacity,
                                            size_t *needed);

// BLEU-`order` of whitespace-tokenized `generated` against `reference`.
//
// # Safety
// Strings must be NUL-terminated; `out` must be valid.
enum SeqvaeStatus seqvae_bleu(const char *generated,
                              const char *reference,
                              uint32_t order,
                              double *out);

// Unigram entropy in nats over `count` whitespace-tokenized sentences.
//
// # Safety
// `sentences` must point to `count` NUL-terminated strings.
enum SeqvaeStatus seqvae_entropy(const char *const *sentences, size_t count, double *out);

// Distinct-`n` over `count` whitespace-tokenized sentences.
//
// # Safety
// `sentences` must point to `count` NUL-terminated strings.
enum SeqvaeStatus seqvae_distinct_n(const char *const *sentences,
                                    size_t count,
                                    uint32_t n,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQVAE_H */
