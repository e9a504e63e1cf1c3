#ifndef NPBG_H
#define NPBG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NpbgStatus {
  NPBG_STATUS_OK = 0,
  NPBG_STATUS_NULL_POINTER = 1,
  NPBG_STATUS_INVALID_ARGUMENT = 2,
  NPBG_STATUS_SHAPE = 3,
  NPBG_STATUS_NON_FINITE = 4,
  NPBG_STATUS_AUTODIFF = 5,
  NPBG_STATUS_INVALID_ROTATION = 6,
  NPBG_STATUS_INVALID_CAMERA = 7,
  NPBG_STATUS_CONFIG = 8,
  NPBG_STATUS_MISSING_FILE = 9,
  NPBG_STATUS_MALFORMED = 10,
  NPBG_STATUS_EXTENT = 11,
  NPBG_STATUS_DIVERGED = 12,
  NPBG_STATUS_IO = 13,
  NPBG_STATUS_IMAGE = 14,
  NPBG_STATUS_PANIC = 15,
} NpbgStatus;

/**
 * A loaded rendering network.
 */
typedef struct NpbgModel NpbgModel;

/**
 * A loaded scene directory.
 */
typedef struct NpbgScene NpbgScene;

/**
 * Pinhole camera; `rotation` is row-major world-to-camera, `p_cam = R p + t`.
 */
typedef struct NpbgCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  double rotation[9];
  double translation[3];
  uint32_t width;
  uint32_t height;
} NpbgCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread (empty after success).
 * Valid until the next call into this library on the same thread.
 */
const char *npbg_last_error_message(void);

/**
 * NUL-terminated library version.
 */
const char *npbg_version(void);

/**
 * Loads a scene directory into `*out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NpbgStatus npbg_scene_load(const char *dir, struct NpbgScene **out);

/**
 * # Safety
 * `scene` must come from [`npbg_scene_load`] (or be null) and not be used afterwards.
 */
void npbg_scene_free(struct NpbgScene *scene);

/**
 * # Safety
 * `scene` and `out` must be valid pointers.
 */
enum NpbgStatus npbg_scene_point_count(const struct NpbgScene *scene, size_t *out);

/**
 * # Safety
 * `scene` and `out` must be valid pointers.
 */
enum NpbgStatus npbg_scene_view_count(const struct NpbgScene *scene, size_t *out);

/**
 * Camera of view `index`.
 *
 * # Safety
 * `scene` and `out` must be valid pointers.
 */
enum NpbgStatus npbg_scene_view_camera(const struct NpbgScene *scene,
                                       size_t index,
                                       struct NpbgCamera *out);

/**
 * Loads a checkpoint (and its `.json` config sidecar) into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NpbgStatus npbg_model_load(const char *path, struct NpbgModel **out);

/**
 * # Safety
 * `model` must come from [`npbg_model_load`] (or be null) and not be used afterwards.
 */
void npbg_model_free(struct NpbgModel *model);

/**
 * Descriptor width `M` the model expects.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum NpbgStatus npbg_model_in_channels(const struct NpbgModel *model, size_t *out);

/**
 * Z-buffer rasterization of `descriptors` (`rows x cols`, row-major, one row
 * per scene point). Writes `cols * H * W` floats to `out_channels` and, if
 * `out_winner` is not null, `H * W` winner indices (`UINT32_MAX` = empty).
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum NpbgStatus npbg_rasterize(const struct NpbgScene *scene,
                               const float *descriptors,
                               size_t rows,
                               size_t cols,
                               const struct NpbgCamera *camera,
                               float *out_channels,
                               uint32_t *out_winner);

/**
 * Renders an RGB image (`3 * H * W` floats in `(0, 1)`) through the
 * network. `descriptors` may be null to use the scene's own descriptors, or
 * zeros if it has none. `aa` is 1, 2 or 4.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum NpbgStatus npbg_render(const struct NpbgModel *model,
                            const struct NpbgScene *scene,
                            const float *descriptors,
                            size_t rows,
                            size_t cols,
                            const struct NpbgCamera *camera,
                            uint32_t aa,
                            float *out_rgb);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NPBG_H */
