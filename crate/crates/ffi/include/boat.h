#ifndef BOAT_H
#define BOAT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BoatStatus {
  BOAT_STATUS_OK = 0,
  BOAT_STATUS_NULL_POINTER = 1,
  BOAT_STATUS_INVALID_ARGUMENT = 2,
  BOAT_STATUS_SHAPE = 3,
  BOAT_STATUS_CONFIG = 4,
  BOAT_STATUS_FORMAT = 5,
  BOAT_STATUS_IO = 6,
  BOAT_STATUS_NUMERIC = 7,
  BOAT_STATUS_PANIC = 8,
} BoatStatus;

/**
 * Result of balanced hierarchical clustering.
 */
typedef struct BoatAssignment BoatAssignment;

/**
 * A model configuration with f32 weights.
 */
typedef struct BoatModel BoatModel;

/**
 * A tensor of f32 or f64 scalars.
 */
typedef struct BoatTensor BoatTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *boat_last_error(void);

/**
 * Copies `prod(shape)` f32 values into a new tensor.
 *
 * # Safety
 * `shape` must point to `ndim` values and `data` to `prod(shape)` values.
 */
enum BoatStatus boat_tensor_new_f32(const size_t *shape,
                                    size_t ndim,
                                    const float *data,
                                    struct BoatTensor **out);

/**
 * Copies `prod(shape)` f64 values into a new tensor.
 *
 * # Safety
 * `shape` must point to `ndim` values and `data` to `prod(shape)` values.
 */
enum BoatStatus boat_tensor_new_f64(const size_t *shape,
                                    size_t ndim,
                                    const double *data,
                                    struct BoatTensor **out);

/**
 * # Safety
 * `t` must be null or a handle from this library not yet freed.
 */
void boat_tensor_free(struct BoatTensor *t);

/**
 * Writes the rank to `ndim` and, if `shape` is non-null, up to `cap` extents.
 *
 * # Safety
 * `t` must be a live handle; `shape` must have room for `cap` values.
 */
enum BoatStatus boat_tensor_shape(const struct BoatTensor *t,
                                  size_t *ndim,
                                  size_t *shape,
                                  size_t cap);

/**
 * 0 for f32, 1 for f64 (the BOATT dtype codes).
 *
 * # Safety
 * `t` must be a live handle.
 */
enum BoatStatus boat_tensor_dtype(const struct BoatTensor *t, uint8_t *dtype);

/**
 * Copies all values, converted to f32, into `out` (room for `cap`).
 *
 * # Safety
 * `t` must be a live handle; `out` must have room for `cap` values.
 */
enum BoatStatus boat_tensor_read_f32(const struct BoatTensor *t, float *out, size_t cap);

/**
 * Copies all values, converted to f64, into `out` (room for `cap`).
 *
 * # Safety
 * `t` must be a live handle; `out` must have room for `cap` values.
 */
enum BoatStatus boat_tensor_read_f64(const struct BoatTensor *t, double *out, size_t cap);

/**
 * Reads a BOATT file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum BoatStatus boat_tensor_load(const char *path, struct BoatTensor **out);

/**
 * Writes a BOATT file.
 *
 * # Safety
 * `t` must be a live handle; `path` a NUL-terminated string.
 */
enum BoatStatus boat_tensor_save(const struct BoatTensor *t, const char *path);

/**
 * Balanced hierarchical clustering of a `[N, C]` tensor (computed in f64)
 * with ratio ranking.
 *
 * # Safety
 * `tokens` must be a live handle; `out` a valid pointer.
 */
enum BoatStatus boat_cluster(const struct BoatTensor *tokens,
                             uint32_t levels,
                             size_t iters,
                             size_t overlap,
                             struct BoatAssignment **out);

/**
 * # Safety
 * `a` must be null or a handle from this library not yet freed.
 */
void boat_assignment_free(struct BoatAssignment *a);

/**
 * # Safety
 * `a` must be a live handle.
 */
enum BoatStatus boat_assignment_num_clusters(const struct BoatAssignment *a, size_t *out);

/**
 * Writes the size of final cluster `index` to `size` and, if `members` is
 * non-null, its token indices in sorted-list order (room for `cap`).
 *
 * # Safety
 * `a` must be a live handle; `members` must have room for `cap` values.
 */
enum BoatStatus boat_assignment_cluster(const struct BoatAssignment *a,
                                        size_t index,
                                        size_t *size,
                                        size_t *members,
                                        size_t cap);

/**
 * Creates a model from a JSON config with seeded random initialization.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum BoatStatus boat_model_new(const char *config_json, uint64_t seed, struct BoatModel **out);

/**
 * Creates a model from a JSON config and a flat 1-D weight tensor.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `weights` a live handle.
 */
enum BoatStatus boat_model_from_weights(const char *config_json,
                                        const struct BoatTensor *weights,
                                        struct BoatModel **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void boat_model_free(struct BoatModel *m);

/**
 * Runs a `[3, H, W]` image through the model; `logits` receives a new
 * `[num_classes]` f32 tensor.
 *
 * # Safety
 * `m` and `image` must be live handles; `logits` a valid pointer.
 */
enum BoatStatus boat_model_forward(const struct BoatModel *m,
                                   const struct BoatTensor *image,
                                   struct BoatTensor **logits);

/**
 * Number of scalar parameters implied by a JSON config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum BoatStatus boat_count_params(const char *config_json, uint64_t *out);

/**
 * Multiply-accumulates and FLOPs (`2 × MACs`) of one forward pass.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; outputs valid pointers.
 */
enum BoatStatus boat_estimate_flops(const char *config_json, uint64_t *macs, uint64_t *flops);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOAT_H */
