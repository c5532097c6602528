#ifndef TWOHEAD_H
#define TWOHEAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum TwoheadStatus {
  TWOHEAD_STATUS_OK = 0,
  TWOHEAD_STATUS_NULL_POINTER = 1,
  TWOHEAD_STATUS_INVALID_ARGUMENT = 2,
  TWOHEAD_STATUS_SHAPE_MISMATCH = 3,
  TWOHEAD_STATUS_IO = 4,
  TWOHEAD_STATUS_EMPTY_RESULT = 5,
  TWOHEAD_STATUS_FAILED = 6,
  TWOHEAD_STATUS_PANIC = 7,
} TwoheadStatus;

// Triplet mining strategy.
typedef enum TwoheadMining {
  TWOHEAD_MINING_BATCH_HARD = 0,
  TWOHEAD_MINING_SEMI_HARD = 1,
} TwoheadMining;

// Opaque network handle.
typedef struct TwoheadNet TwoheadNet;

// Opaque mined triplet set.
typedef struct TwoheadTriplets TwoheadTriplets;

// Static description of a network.
typedef struct TwoheadNetInfo {
  size_t height;
  size_t width;
  size_t channels;
  size_t n_classes;
  size_t d_emb;
  size_t param_count;
} TwoheadNetInfo;

// Indices into the mined batch.
typedef struct TwoheadTriplet {
  size_t anchor;
  size_t positive;
  size_t negative;
} TwoheadTriplet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *twohead_last_error(void);

// Library version as a static NUL-terminated string.
const char *twohead_version(void);

// Creates a network with the default desk trunk (two 3x3 stride-2
// convolutions with 8 channels) for `height x width x channels` inputs.
//
// # Safety
// `out` must be valid for one pointer write.
enum TwoheadStatus twohead_net_new(size_t height,
                                   size_t width,
                                   size_t channels,
                                   size_t n_classes,
                                   size_t d_emb,
                                   uint64_t seed,
                                   struct TwoheadNet **out);

// Loads a checkpoint written by `twohead train` or [`twohead_net_save`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for one write.
enum TwoheadStatus twohead_net_load(const char *path, struct TwoheadNet **out);

// # Safety
// `net` must come from this library; `path` must be NUL-terminated.
enum TwoheadStatus twohead_net_save(const struct TwoheadNet *net, const char *path);

// Releases a network. Null is ignored.
//
// # Safety
// `net` must come from this library and not be used afterwards.
void twohead_net_free(struct TwoheadNet *net);

// # Safety
// `net` must come from this library; `out` must be valid for one write.
enum TwoheadStatus twohead_net_info(const struct TwoheadNet *net, struct TwoheadNetInfo *out);

// Runs one `height x width x channels` (HWC) input through both heads.
// `logits` receives `n_classes` values and `embedding` `d_emb` values;
// `raw_norm` (optional) receives the pre-normalization embedding norm.
//
// # Safety
// Buffers must be valid for the stated lengths; `raw_norm` may be null.
enum TwoheadStatus twohead_net_forward(const struct TwoheadNet *net,
                                       const double *input,
                                       size_t input_len,
                                       double *logits,
                                       size_t logits_len,
                                       double *embedding,
                                       size_t embedding_len,
                                       double *raw_norm);

// Squared Euclidean distances between the `n` rows of `embeddings`
// (`n x d`), written to `out` (`n x n`).
//
// # Safety
// `embeddings` must hold `n * d` values and `out` `n * n`.
enum TwoheadStatus twohead_pairwise_sq_distances(const double *embeddings,
                                                 size_t n,
                                                 size_t d,
                                                 double *out);

// Mines triplets from a labeled batch. `margin` is used by semi-hard
// mining only. Fails with `EmptyResult` when the batch has no valid triplet.
//
// # Safety
// `embeddings` must hold `n * d` values, `labels` `n`, and `out` must be
// valid for one write.
enum TwoheadStatus twohead_mine(const double *embeddings,
                                const size_t *labels,
                                size_t n,
                                size_t d,
                                enum TwoheadMining strategy,
                                double margin,
                                struct TwoheadTriplets **out);

// Number of triplets in a set; 0 for null.
//
// # Safety
// `set` must be null or come from [`twohead_mine`].
size_t twohead_triplets_len(const struct TwoheadTriplets *set);

// # Safety
// `set` must come from [`twohead_mine`]; `out` must be valid for one write.
enum TwoheadStatus twohead_triplets_get(const struct TwoheadTriplets *set,
                                        size_t index,
                                        struct TwoheadTriplet *out);

// Releases a triplet set. Null is ignored.
//
// # Safety
// `set` must come from [`twohead_mine`] and not be used afterwards.
void twohead_triplets_free(struct TwoheadTriplets *set);

// Recall@K of a labeled batch, `1 <= k < n`.
//
// # Safety
// `embeddings` must hold `n * d` values, `labels` `n`; `out` one write.
enum TwoheadStatus twohead_recall_at_k(const double *embeddings,
                                       const size_t *labels,
                                       size_t n,
                                       size_t d,
                                       size_t k,
                                       double *out);

// Normalized mutual information between two partitions of `n` items.
//
// # Safety
// `truth` and `learned` must hold `n` values; `out` one write.
enum TwoheadStatus twohead_nmi(const size_t *truth, const size_t *learned, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOHEAD_H */
