#ifndef MIXINTERP_H
#define MIXINTERP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call.
 */
typedef enum MixStatus {
  MIX_STATUS_OK = 0,
  MIX_STATUS_NULL_POINTER = 1,
  MIX_STATUS_INVALID_ARGUMENT = 2,
  MIX_STATUS_CONFIG = 3,
  MIX_STATUS_MISSING_ARTIFACT = 4,
  MIX_STATUS_FORMAT = 5,
  MIX_STATUS_NUMERIC_FAILURE = 6,
  MIX_STATUS_NO_DATA = 7,
  MIX_STATUS_PANIC = 8,
} MixStatus;

/**
 * Opaque loaded model.
 */
typedef struct MixCheckpoint MixCheckpoint;

/**
 * Half-open pixel box `[x0, x1) × [y0, y1)`.
 */
typedef struct MixRect {
  size_t x0;
  size_t y0;
  size_t x1;
  size_t y1;
} MixRect;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call on the same thread.
 */
const char *mix_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mix_version(void);

/**
 * Loads a checkpoint file. On success `*out` owns a handle to be released
 * with [`mix_checkpoint_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MixStatus mix_checkpoint_load(const char *path, struct MixCheckpoint **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `handle` must come from [`mix_checkpoint_load`] and not be used afterwards.
 */
void mix_checkpoint_free(struct MixCheckpoint *handle);

/**
 * Input shape and class count of a checkpoint.
 *
 * # Safety
 * `handle` must be a live handle; the out pointers must be valid.
 */
enum MixStatus mix_checkpoint_shape(const struct MixCheckpoint *handle,
                                    size_t *channels,
                                    size_t *image_size,
                                    size_t *num_classes);

/**
 * Softmax probability of `class` for `n_images` images stored back to back.
 *
 * # Safety
 * `images` must hold `n_images × C × S × S` floats and `out` `n_images`.
 */
enum MixStatus mix_scores(const struct MixCheckpoint *handle,
                          const float *images,
                          size_t n_images,
                          size_t class_,
                          float *out);

/**
 * Grad-CAM map for `class` at the last convolutional layer, upsampled to the
 * input size and scaled to `[0, 1]`.
 *
 * # Safety
 * `image` must hold `C × S × S` floats and `out_map` `S × S`.
 */
enum MixStatus mix_gradcam(const struct MixCheckpoint *handle,
                           const float *image,
                           size_t class_,
                           float *out_map);

/**
 * Share of non-negative map mass inside the union of the boxes.
 *
 * # Safety
 * `map` must hold `height × width` floats, `boxes` `n_boxes` entries.
 */
enum MixStatus mix_energy_pg(const float *map,
                             size_t height,
                             size_t width,
                             const struct MixRect *boxes,
                             size_t n_boxes,
                             double *out);

/**
 * Effective heat ratio over `n_thresholds` evenly spaced thresholds in
 * `[0, max_threshold]`. The map must lie in `[0, 1]`.
 *
 * # Safety
 * As for [`mix_energy_pg`].
 */
enum MixStatus mix_ehr(const float *map,
                       size_t height,
                       size_t width,
                       const struct MixRect *boxes,
                       size_t n_boxes,
                       size_t n_thresholds,
                       float max_threshold,
                       double *out);

/**
 * IoU of the box around pixels above `threshold` with the best ground-truth
 * box.
 *
 * # Safety
 * As for [`mix_energy_pg`].
 */
enum MixStatus mix_wsol_iou(const float *map,
                            size_t height,
                            size_t width,
                            const struct MixRect *boxes,
                            size_t n_boxes,
                            float threshold,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXINTERP_H */
