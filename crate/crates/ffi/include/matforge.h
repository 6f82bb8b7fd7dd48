#ifndef MATFORGE_H
#define MATFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an API call.
 */
typedef enum MfStatus {
  MF_STATUS_OK = 0,
  MF_STATUS_NULL_ARGUMENT = 1,
  MF_STATUS_INVALID_STRING = 2,
  /**
   * The scene config could not be loaded.
   */
  MF_STATUS_CONFIG_ERROR = 3,
  /**
   * A pipeline stage failed after loading.
   */
  MF_STATUS_STAGE_ERROR = 4,
  MF_STATUS_OUT_OF_RANGE = 5,
  /**
   * A value is not available, such as PSNR for a view without ground truth.
   */
  MF_STATUS_UNAVAILABLE = 6,
  MF_STATUS_IO = 7,
  MF_STATUS_PANIC = 8,
} MfStatus;

/**
 * Baked material atlas.
 */
typedef struct MfAtlas MfAtlas;

/**
 * Outcome of a pipeline run.
 */
typedef struct MfReport MfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next API call on the same thread.
 */
const char *mf_last_error(void);

/**
 * Runs the full pipeline, or one named stage when `stage` is non-null.
 * `seed` overrides the config seed when `use_seed` is true.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out_report` must be
 * null or writable.
 */
enum MfStatus mf_run(const char *config,
                     const char *out_dir,
                     const char *stage,
                     uint64_t seed,
                     bool use_seed,
                     struct MfReport **out_report);

/**
 * # Safety
 * `report` must be null or a handle from [`mf_run`] not yet freed.
 */
void mf_report_free(struct MfReport *report);

/**
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum MfStatus mf_report_view_count(const struct MfReport *report, size_t *out);

/**
 * Re-rendering PSNR of view `index` in dB.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum MfStatus mf_report_view_psnr(const struct MfReport *report, size_t index, double *out);

/**
 * Fraction of chart texels covered by at least one view.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum MfStatus mf_report_coverage(const struct MfReport *report, double *out);

/**
 * Loads an atlas directory written by the bake stage.
 *
 * # Safety
 * `dir` must be null or NUL-terminated; `out` must be writable.
 */
enum MfStatus mf_atlas_load(const char *dir, struct MfAtlas **out);

/**
 * # Safety
 * `atlas` must be null or a handle from [`mf_atlas_load`] not yet freed.
 */
void mf_atlas_free(struct MfAtlas *atlas);

/**
 * Atlas side length in texels.
 *
 * # Safety
 * `atlas` must be a live handle; `out` must be writable.
 */
enum MfStatus mf_atlas_resolution(const struct MfAtlas *atlas, size_t *out);

/**
 * Material at texel (x, y) as diffuse rgb, specular rgb, roughness.
 * `covered` receives whether any view contributed to the texel and may be
 * null.
 *
 * # Safety
 * `atlas` must be a live handle; `channels` must hold 7 floats.
 */
enum MfStatus mf_atlas_texel(const struct MfAtlas *atlas,
                             size_t x,
                             size_t y,
                             float *channels,
                             bool *covered);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MATFORGE_H */
