#ifndef DUALPOSENET_H
#define DUALPOSENET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DpnStatus {
  DPN_STATUS_OK = 0,
  DPN_STATUS_NULL_POINTER = 1,
  DPN_STATUS_INVALID_ARGUMENT = 2,
  DPN_STATUS_IO = 3,
  DPN_STATUS_FORMAT = 4,
  DPN_STATUS_DEGENERATE = 5,
  DPN_STATUS_NUMERIC = 6,
  DPN_STATUS_INTERNAL = 7,
} DpnStatus;

typedef enum DpnMode {
  /**
   * Explicit decoder output.
   */
  DPN_MODE_DIRECT = 0,
  /**
   * Similarity alignment of the implicit decoder output.
   */
  DPN_MODE_ALIGN = 1,
} DpnMode;

/**
 * Opaque trained model.
 */
typedef struct DpnModel DpnModel;

typedef struct DpnPose {
  double rotation[9];
  double translation[3];
  double size[3];
} DpnPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dpn_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *dpn_last_error_message(void);

/**
 * Loads a checkpoint written by the `train` command (its `.json`
 * configuration sidecar must sit next to it).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum DpnStatus dpn_model_load(const char *path, struct DpnModel **out);

/**
 * # Safety
 * `model` must come from [`dpn_model_load`] and not be used afterwards.
 */
void dpn_model_free(struct DpnModel *model);

/**
 * Pose of one object crop of `n` points with RGB colors in `[0, 1]`.
 *
 * # Safety
 * `points` and `colors` must hold `3n` values; `out` must be writable.
 */
enum DpnStatus dpn_predict(const struct DpnModel *model,
                           const double *points,
                           const double *colors,
                           size_t n,
                           enum DpnMode mode,
                           struct DpnPose *out);

/**
 * Test-time refinement of the encoder on one crop. The model is not
 * modified. `iterations` and `loss` may be null.
 *
 * # Safety
 * As for [`dpn_predict`].
 */
enum DpnStatus dpn_refine(const struct DpnModel *model,
                          const double *points,
                          const double *colors,
                          size_t n,
                          double lr,
                          double eps,
                          size_t max_iters,
                          struct DpnPose *out,
                          size_t *iterations,
                          double *loss);

/**
 * Least-squares similarity with `dst ≈ scale·R·src + t`.
 *
 * # Safety
 * `src` and `dst` must hold `3n` values; outputs must be writable.
 */
enum DpnStatus dpn_umeyama(const double *src,
                           const double *dst,
                           size_t n,
                           double (*rotation)[9],
                           double (*translation)[3],
                           double *scale);

/**
 * Intersection over union of two oriented boxes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DpnStatus dpn_iou3d(const struct DpnPose *a, const struct DpnPose *b, double *out);

/**
 * Rotation error in degrees; `axis` is null for asymmetric objects or the
 * canonical symmetry axis otherwise.
 *
 * # Safety
 * `r1`, `r2` and `out` must be valid; `axis` may be null.
 */
enum DpnStatus dpn_rotation_error(const double (*r1)[9],
                                  const double (*r2)[9],
                                  const double (*axis)[3],
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALPOSENET_H */
