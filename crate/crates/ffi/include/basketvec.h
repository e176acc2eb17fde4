#ifndef BASKETVEC_H
#define BASKETVEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BvStatus {
  BV_STATUS_OK = 0,
  BV_STATUS_NULL_POINTER = 1,
  BV_STATUS_IO = 2,
  BV_STATUS_FORMAT = 3,
  BV_STATUS_INVALID_ARGUMENT = 4,
  BV_STATUS_UNKNOWN_ID = 5,
  BV_STATUS_DIMENSION_MISMATCH = 6,
  BV_STATUS_EMPTY = 7,
  BV_STATUS_PANIC = 8,
} BvStatus;

typedef struct BvEmbeddings BvEmbeddings;

typedef struct BvIndex BvIndex;

typedef struct BvRecommender BvRecommender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bv_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *bv_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BvStatus bv_embeddings_load(const char *path, struct BvEmbeddings **out);

/**
 * # Safety
 * `h` must be NULL or a handle from `bv_embeddings_load` not yet freed.
 */
void bv_embeddings_free(struct BvEmbeddings *h);

/**
 * Number of rows, or 0 for NULL.
 *
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t bv_embeddings_len(const struct BvEmbeddings *h);

/**
 * Vector dimension, or 0 for NULL.
 *
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t bv_embeddings_dim(const struct BvEmbeddings *h);

/**
 * Copies the row ids (file order) into `out_ids`, which holds `capacity` entries.
 *
 * # Safety
 * `out_ids` must point to `capacity` writable `uint64_t`.
 */
enum BvStatus bv_embeddings_ids(const struct BvEmbeddings *h, uint64_t *out_ids, size_t capacity);

/**
 * Copies the vector of `id` into `out`, which must hold exactly `dim` values.
 *
 * # Safety
 * `out` must point to `dim` writable doubles.
 */
enum BvStatus bv_embeddings_get(const struct BvEmbeddings *h, uint64_t id, double *out, size_t dim);

/**
 * Builds a random-projection forest over all rows of `emb`.
 *
 * # Safety
 * `emb` must be a live handle and `out` a valid pointer.
 */
enum BvStatus bv_index_build(const struct BvEmbeddings *emb,
                             size_t n_trees,
                             size_t leaf_size,
                             uint64_t seed,
                             struct BvIndex **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BvStatus bv_index_load(const char *path, struct BvIndex **out);

/**
 * # Safety
 * `h` must be a live handle and `path` a NUL-terminated string.
 */
enum BvStatus bv_index_save(const struct BvIndex *h, const char *path);

/**
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void bv_index_free(struct BvIndex *h);

/**
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t bv_index_len(const struct BvIndex *h);

/**
 * # Safety
 * `h` must be NULL or a live handle.
 */
size_t bv_index_dim(const struct BvIndex *h);

/**
 * Approximate `k` nearest neighbours of `query` by cosine distance.
 * `search_k` is the node budget, 0 for the default. Up to `k` results are
 * written; `out_count` receives how many.
 *
 * # Safety
 * `query` must hold `dim` doubles; `out_ids` and `out_distances` `k` entries each.
 */
enum BvStatus bv_index_query(const struct BvIndex *h,
                             const double *query,
                             size_t dim,
                             size_t k,
                             size_t search_k,
                             uint64_t *out_ids,
                             double *out_distances,
                             size_t *out_count);

/**
 * Opens a recommender over a catalog CSV and indexes of rho and (optionally,
 * may be NULL) alpha vectors.
 *
 * # Safety
 * Paths must be NUL-terminated strings (`alpha_index_path` may be NULL).
 */
enum BvStatus bv_recommender_open(const char *catalog_path,
                                  const char *rho_index_path,
                                  const char *alpha_index_path,
                                  struct BvRecommender **out);

/**
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void bv_recommender_free(struct BvRecommender *h);

/**
 * Products most similar to `product_id` (rho cosine similarity, descending).
 *
 * # Safety
 * `out_ids` and `out_scores` must hold `k` entries each.
 */
enum BvStatus bv_recommender_similar(const struct BvRecommender *h,
                                     uint64_t product_id,
                                     size_t k,
                                     uint64_t *out_ids,
                                     double *out_scores,
                                     size_t *out_count);

/**
 * Products most often bought with `product_id` (rho . alpha, descending).
 * Needs the alpha index.
 *
 * # Safety
 * `out_ids` and `out_scores` must hold `k` entries each.
 */
enum BvStatus bv_recommender_cooccur(const struct BvRecommender *h,
                                     uint64_t product_id,
                                     size_t k,
                                     uint64_t *out_ids,
                                     double *out_scores,
                                     size_t *out_count);

/**
 * `true_pairs / (true_pairs + fake_pairs)`; `BV_STATUS_EMPTY` when both are 0.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum BvStatus bv_cluster_score(uint64_t true_pairs, uint64_t fake_pairs, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BASKETVEC_H */
