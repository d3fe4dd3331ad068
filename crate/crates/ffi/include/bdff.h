/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef BDFF_H
#define BDFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  BDFF_STATUS_OK = 0,
  BDFF_STATUS_NULL_POINTER = 1,
  BDFF_STATUS_INVALID_ARGUMENT = 2,
  BDFF_STATUS_SHAPE = 3,
  BDFF_STATUS_CONFIG = 4,
  BDFF_STATUS_DOMAIN = 5,
  BDFF_STATUS_CHECKPOINT = 6,
  BDFF_STATUS_IO = 7,
  BDFF_STATUS_FORMAT = 8,
  BDFF_STATUS_NON_FINITE = 9,
  BDFF_STATUS_PANIC = 10,
} BdffStatus;

/**
 * Opaque trained network.
 */
typedef struct BdffModel BdffModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *bdff_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *bdff_last_error(void);

/**
 * Loads a network. `net` is one of `edof`, `focus`, `focus2`, `stereo`,
 * `bdff`. `config_path` (nullable) names a training configuration or a run's
 * `config.json`; without it the default widths are used.
 */
BdffStatus bdff_model_load(const char *net,
                           const char *checkpoint_path,
                           const char *config_path,
                           BdffModel **out);

/**
 * Attaches the EDoFNet a StereoNet handle uses to turn stacks into images.
 */
BdffStatus bdff_model_attach_edof(BdffModel *model, const char *edof_checkpoint_path);

void bdff_model_free(BdffModel *model);

/**
 * Focal slices per stack the network expects, or 0 for a null handle.
 */
size_t bdff_model_slices(const BdffModel *model);

/**
 * Input extents are cropped to multiples of this, or 0 for a null handle.
 */
size_t bdff_model_multiple(const BdffModel *model);

/**
 * Predicts normalised disparity in `[0, 1]` from RGB focal stacks of
 * `bdff_model_slices` slices each. `right` is required for StereoNet and
 * BDfFNet and ignored otherwise. The output is cropped at the bottom and
 * right to multiples of `bdff_model_multiple`; `out_depth` must hold
 * `width·height` values and receives `out_width·out_height` of them.
 */
BdffStatus bdff_model_infer(const BdffModel *model,
                            const float *left,
                            const float *right,
                            size_t width,
                            size_t height,
                            float *out_depth,
                            size_t *out_width,
                            size_t *out_height);

/**
 * All-in-focus RGB image from an EDoFNet handle. `out_rgb` must hold
 * `width·height·3` values; cropping follows [`bdff_model_infer`].
 */
BdffStatus bdff_model_edof(const BdffModel *model,
                           const float *stack,
                           size_t width,
                           size_t height,
                           float *out_rgb,
                           size_t *out_width,
                           size_t *out_height);

/**
 * Thin-lens blur-circle diameter in pixels of a point at `depth_mm`.
 */
BdffStatus bdff_coc_diameter(double focal_length_mm,
                             double aperture_mm,
                             double sensor_distance_mm,
                             double pixel_pitch_mm,
                             double depth_mm,
                             double *out_px);

/**
 * Classical depth from focus on a packed stack of `slices` images with
 * `channels` channels. Writes the sharpest slice per pixel to `out_index`
 * and, when non-null, its confidence to `out_confidence` (`width·height`
 * values each).
 */
BdffStatus bdff_classical_dff(const float *stack,
                              size_t slices,
                              size_t width,
                              size_t height,
                              size_t channels,
                              uint32_t *out_index,
                              float *out_confidence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BDFF_H */
