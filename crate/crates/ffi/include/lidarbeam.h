#ifndef LIDARBEAM_H
#define LIDARBEAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum LbStatus {
  LB_STATUS_OK = 0,
  /**
   * Invalid argument, configuration, or shape.
   */
  LB_STATUS_INVALID = 2,
  LB_STATUS_IO = 3,
  LB_STATUS_NON_FINITE = 4,
  LB_STATUS_NULL_POINTER = 5,
  /**
   * Output buffer too small.
   */
  LB_STATUS_BUFFER_TOO_SMALL = 6,
  LB_STATUS_PANIC = 7,
} LbStatus;

/**
 * Opaque model handle.
 */
typedef struct LbModel LbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *lb_last_error(void);

/**
 * Freshly initialised model. `attention`: 0 none, 1 embedded Gaussian,
 * 2 Gaussian, 3 dot product.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LbStatus lb_model_new(uint64_t seed, uint32_t attention, struct LbModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum LbStatus lb_model_load(const char *path, struct LbModel **out);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be nul-terminated.
 */
enum LbStatus lb_model_save(const struct LbModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and must not be used afterwards.
 */
void lb_model_free(struct LbModel *model);

/**
 * Parameter count, grid rows and columns, and number of outputs.
 *
 * # Safety
 * `model` must come from this library; outputs must be writable.
 */
enum LbStatus lb_model_info(const struct LbModel *model,
                            uintptr_t *params,
                            uintptr_t *rows,
                            uintptr_t *cols,
                            uintptr_t *outputs);

/**
 * Beam-pair probabilities for one occupancy grid (row-major, `rows·cols`
 * values) and vehicle position in metres. Non-finite inputs are rejected.
 *
 * # Safety
 * `grid` must hold `grid_len` values, `veh` three, and `out` `out_len`.
 */
enum LbStatus lb_model_predict(const struct LbModel *model,
                               const double *grid,
                               uintptr_t grid_len,
                               const double *veh,
                               double *out,
                               uintptr_t out_len);

/**
 * Indices of the `k` largest scores, descending, ties to the lower index.
 *
 * # Safety
 * `scores` must hold `n` values and `out` at least `k`.
 */
enum LbStatus lb_topk(const double *scores, uintptr_t n, uintptr_t k, uint32_t *out);

/**
 * Bins `n_points` xyz points into the default 200×20 occupancy grid with
 * the base station and vehicle markers. Writes `rows·cols` cells.
 *
 * # Safety
 * `points` must hold `3·n_points` values, `bs` and `veh` three each, and
 * `out` `out_len`.
 */
enum LbStatus lb_preprocess(const double *points,
                            uintptr_t n_points,
                            const double *bs,
                            const double *veh,
                            int8_t *out,
                            uintptr_t out_len);

/**
 * Generates `count` scenes starting at `first_id` with the default
 * generator and scene seed `seed`, writing JSON Lines to `path` and the
 * summary next to it. `nlos_fraction` may be null.
 *
 * # Safety
 * `path` must be nul-terminated; `nlos_fraction` null or writable.
 */
enum LbStatus lb_generate(const char *path,
                          uint64_t seed,
                          uint64_t first_id,
                          uintptr_t count,
                          double *nlos_fraction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIDARBEAM_H */
