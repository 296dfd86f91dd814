#ifndef STDEPTH_H
#define STDEPTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StdepthStatus {
  STDEPTH_STATUS_OK = 0,
  STDEPTH_STATUS_NULL_POINTER = 1,
  STDEPTH_STATUS_INVALID_ARGUMENT = 2,
  STDEPTH_STATUS_CONFIG = 3,
  STDEPTH_STATUS_NUMERIC = 4,
  STDEPTH_STATUS_IO = 5,
  STDEPTH_STATUS_BUFFER_TOO_SMALL = 6,
  STDEPTH_STATUS_DIVERGED = 7,
  STDEPTH_STATUS_PANIC = 8,
} StdepthStatus;

/**
 * Parsed run configuration.
 */
typedef struct StdepthConfig StdepthConfig;

/**
 * Outcome of one optimisation.
 */
typedef struct StdepthResult StdepthResult;

/**
 * Synthetic stereo-temporal scene with ground truth.
 */
typedef struct StdepthScene StdepthScene;

typedef struct StdepthDepthMetrics {
  double abs_rel;
  double sq_rel;
  double rmse;
  double rmse_log;
  double delta1;
  double delta2;
  double delta3;
  size_t count;
} StdepthDepthMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next call into this library.
 */
const char *stdepth_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stdepth_version(void);

/**
 * Renders a preset scene. `width`/`height` of 0 keep the preset size.
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StdepthStatus stdepth_scene_generate(const char *preset,
                                          uint64_t seed,
                                          size_t width,
                                          size_t height,
                                          struct StdepthScene **out);

/**
 * Loads a directory written by `stdepth gen` or [`stdepth_scene_save`].
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StdepthStatus stdepth_scene_load(const char *dir, struct StdepthScene **out);

/**
 * # Safety
 * `scene` must come from this library; `dir` must be a NUL-terminated string.
 */
enum StdepthStatus stdepth_scene_save(const struct StdepthScene *scene, const char *dir);

/**
 * # Safety
 * `scene` must come from this library; the outputs must be valid pointers.
 */
enum StdepthStatus stdepth_scene_size(const struct StdepthScene *scene,
                                      size_t *width,
                                      size_t *height);

/**
 * Ground-truth intrinsics `[fx, fy, x0, y0]` and pose `[rx, ry, rz, tx, ty, tz]`.
 *
 * # Safety
 * `scene` must come from this library; `intrinsics` must hold 4 and `pose` 6 values.
 */
enum StdepthStatus stdepth_scene_ground_truth(const struct StdepthScene *scene,
                                              double *intrinsics,
                                              double *pose);

/**
 * Copies the left ground-truth depth into `out` (`len ≥ width·height`).
 *
 * # Safety
 * `scene` must come from this library; `out` must hold `len` values.
 */
enum StdepthStatus stdepth_scene_gt_depth(const struct StdepthScene *scene,
                                          double *out,
                                          size_t len);

/**
 * # Safety
 * `scene` must come from this library or be null; it must not be used afterwards.
 */
void stdepth_scene_free(struct StdepthScene *scene);

/**
 * Parses `key = value` config text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StdepthStatus stdepth_config_parse(const char *text, struct StdepthConfig **out);

/**
 * # Safety
 * `config` must come from this library or be null; it must not be used afterwards.
 */
void stdepth_config_free(struct StdepthConfig *config);

/**
 * Optimises depth, pose and intrinsics for `scene` under `config`.
 *
 * A diverged run still produces a result (with the last finite variables)
 * and returns [`StdepthStatus::Diverged`].
 *
 * # Safety
 * Handles must come from this library and `out` must be a valid pointer.
 */
enum StdepthStatus stdepth_optimize(const struct StdepthScene *scene,
                                    const struct StdepthConfig *config,
                                    struct StdepthResult **out);

/**
 * Final loss and number of executed steps.
 *
 * # Safety
 * `result` must come from this library; outputs must be valid pointers.
 */
enum StdepthStatus stdepth_result_summary(const struct StdepthResult *result,
                                          double *final_loss,
                                          size_t *steps);

/**
 * Estimated intrinsics `[fx, fy, x0, y0]` and pose `[rx, ry, rz, tx, ty, tz]`.
 *
 * # Safety
 * `result` must come from this library; `intrinsics` must hold 4 and `pose` 6 values.
 */
enum StdepthStatus stdepth_result_camera(const struct StdepthResult *result,
                                         double *intrinsics,
                                         double *pose);

/**
 * Copies the estimated left depth into `out` (`len ≥ width·height`).
 *
 * # Safety
 * `result` must come from this library; `out` must hold `len` values.
 */
enum StdepthStatus stdepth_result_depth(const struct StdepthResult *result,
                                        double *out,
                                        size_t len);

/**
 * # Safety
 * `result` must come from this library or be null; it must not be used afterwards.
 */
void stdepth_result_free(struct StdepthResult *result);

/**
 * Depth metrics over pixels with `0 < gt ≤ cap`.
 *
 * # Safety
 * `pred` and `gt` must hold `width·height` values; `out` must be a valid pointer.
 */
enum StdepthStatus stdepth_depth_metrics(const double *pred,
                                         const double *gt,
                                         size_t width,
                                         size_t height,
                                         double cap,
                                         bool median_scale,
                                         struct StdepthDepthMetrics *out);

/**
 * Focal-length tolerance for a rotation. An unbounded tolerance is reported as `+inf`.
 *
 * # Safety
 * `k` must hold `[fx, fy, x0, y0]`; outputs must be valid pointers.
 */
enum StdepthStatus stdepth_focal_tolerance(const double *k,
                                           double width,
                                           double height,
                                           double rx,
                                           double ry,
                                           double *delta_fx,
                                           double *delta_fy);

/**
 * Whether `K R K⁻¹` determines `K` (multi-start check). `identifiable` is set
 * to 1 if so, 0 if another `K` reproduces it, -1 if no trial converged.
 *
 * # Safety
 * `k` must hold 4 values, `rotation` 3; `identifiable` must be a valid pointer.
 */
enum StdepthStatus stdepth_verify_uniqueness(const double *k,
                                             const double *rotation,
                                             size_t trials,
                                             uint64_t seed,
                                             int32_t *identifiable);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STDEPTH_H */
