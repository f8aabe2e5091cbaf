#ifndef TSE_H
#define TSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TseStatus {
  TSE_STATUS_OK = 0,
  TSE_STATUS_NULL_POINTER = 1,
  TSE_STATUS_INVALID_ARGUMENT = 2,
  TSE_STATUS_DATA = 3,
  TSE_STATUS_NUMERICAL = 4,
  TSE_STATUS_BUFFER_TOO_SMALL = 5,
  TSE_STATUS_PANIC = 6,
} TseStatus;

/**
 * Speaker embedding extractor.
 */
typedef struct TseEmbedder TseEmbedder;

/**
 * Fitted LDA projection.
 */
typedef struct TseLda TseLda;

/**
 * Cue-conditioned extraction network.
 */
typedef struct TseSeparator TseSeparator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *tse_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tse_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TseStatus tse_embedder_load(const char *path, struct TseEmbedder **out);

/**
 * Embedding dimension, 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t tse_embedder_dim(const struct TseEmbedder *h);

/**
 * Embeds a mono waveform of `len` samples.
 *
 * # Safety
 * `samples` must hold `len` values, `out` `capacity` values.
 */
enum TseStatus tse_embedder_embed(const struct TseEmbedder *h,
                                  const double *samples,
                                  size_t len,
                                  uint32_t sample_rate,
                                  double *out,
                                  size_t capacity,
                                  size_t *out_len);

/**
 * # Safety
 * `h` must be null or a handle from [`tse_embedder_load`] not yet freed.
 */
void tse_embedder_free(struct TseEmbedder *h);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TseStatus tse_lda_load(const char *path, struct TseLda **out);

/**
 * Input and output dimensions.
 *
 * # Safety
 * `h` must be a live handle; `dim_in` and `dim_out` may be null.
 */
enum TseStatus tse_lda_dims(const struct TseLda *h, size_t *dim_in, size_t *dim_out);

/**
 * Projects one embedding.
 *
 * # Safety
 * `embedding` must hold `len` values, `out` `capacity` values.
 */
enum TseStatus tse_lda_transform(const struct TseLda *h,
                                 const double *embedding,
                                 size_t len,
                                 double *out,
                                 size_t capacity,
                                 size_t *out_len);

/**
 * # Safety
 * `h` must be null or a handle from [`tse_lda_load`] not yet freed.
 */
void tse_lda_free(struct TseLda *h);

/**
 * Loads a checkpoint written by `train-tse` (`best.ckpt` or `last.ckpt`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TseStatus tse_separator_load(const char *path, struct TseSeparator **out);

/**
 * Cue dimension the separator expects, 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t tse_separator_cue_dim(const struct TseSeparator *h);

/**
 * Extracts the cued speaker from a mixture; the output has the mixture's length.
 *
 * # Safety
 * `mixture` must hold `len` values, `cue` `cue_len`, `out` `capacity`.
 */
enum TseStatus tse_separator_extract(const struct TseSeparator *h,
                                     const double *mixture,
                                     size_t len,
                                     uint32_t sample_rate,
                                     const double *cue,
                                     size_t cue_len,
                                     double *out,
                                     size_t capacity,
                                     size_t *out_len);

/**
 * # Safety
 * `h` must be null or a handle from [`tse_separator_load`] not yet freed.
 */
void tse_separator_free(struct TseSeparator *h);

/**
 * Scale-invariant SDR in dB of `estimate` against `reference`.
 *
 * # Safety
 * Both arrays must hold `len` values; `out` must be valid.
 */
enum TseStatus tse_si_sdr(const double *reference, const double *estimate, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSE_H */
