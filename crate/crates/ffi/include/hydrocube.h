/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef HYDROCUBE_H
#define HYDROCUBE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HcStatus {
  HC_STATUS_OK = 0,
  HC_STATUS_NULL_POINTER = 1,
  HC_STATUS_INVALID_ARGUMENT = 2,
  HC_STATUS_SHAPE_MISMATCH = 3,
  HC_STATUS_NON_BINARY = 4,
  HC_STATUS_IO = 5,
  HC_STATUS_FORMAT = 6,
  HC_STATUS_NUMERIC = 7,
  HC_STATUS_PANIC = 8,
} HcStatus;

/**
 * A loaded datacube.
 */
typedef struct HcCube HcCube;

/**
 * A dated area/volume series.
 */
typedef struct HcSeries HcSeries;

typedef struct HcConfusion {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
} HcConfusion;

typedef struct HcScores {
  double precision;
  double recall;
  double iou;
} HcScores;

typedef struct HcLossTerms {
  /**
   * Despeckle and forecast: MSE. Segmentation: BCE.
   */
  double primary;
  /**
   * Despeckle and forecast: SSIM. Segmentation: gap term.
   */
  double structural;
  /**
   * Despeckle: TV. Forecast: temporal smoothness. Segmentation: 0.
   */
  double regularizer;
  double total;
} HcLossTerms;

typedef struct HcHydroRecord {
  /**
   * Days since 1970-01-01.
   */
  int64_t days_since_epoch;
  double area_m2;
  double volume_m3;
  uint64_t pixels;
} HcHydroRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next hydrocube call on the thread.
 */
const char *hc_last_error(void);

/**
 * Library version as a NUL-terminated string with static lifetime.
 */
const char *hc_version(void);

/**
 * Confusion counts of binary masks (water = 1).
 *
 * # Safety
 * `pred` and `target` must point to `height * width` bytes; `out` must be
 * writable.
 */
enum HcStatus hc_confusion(const uint8_t *pred,
                           const uint8_t *target,
                           size_t height,
                           size_t width,
                           struct HcConfusion *out_counts);

/**
 * Water-class scores and the support-weighted two-class average.
 *
 * # Safety
 * As [`hc_confusion`]; `out_water` and `out_weighted` may each be null to
 * skip that result.
 */
enum HcStatus hc_scores(const uint8_t *pred,
                        const uint8_t *target,
                        size_t height,
                        size_t width,
                        struct HcScores *out_water,
                        struct HcScores *out_weighted);

/**
 * Mean squared error, PSNR (dB, given `peak`) and SSIM (7x7 window,
 * dynamic range `peak`) between two images.
 *
 * # Safety
 * `a`, `b` must point to `height * width` floats; outputs may be null.
 */
enum HcStatus hc_image_quality(const float *a,
                               const float *b,
                               size_t height,
                               size_t width,
                               double peak,
                               double *out_mse,
                               double *out_psnr,
                               double *out_ssim);

/**
 * Water surface area: water pixels times `pixel_area_m2`.
 *
 * # Safety
 * `mask` must point to `height * width` bytes of 0/1.
 */
enum HcStatus hc_surface_area(const uint8_t *mask_ptr,
                              size_t height,
                              size_t width,
                              double pixel_area_m2,
                              double *out_area_m2);

/**
 * Water volume: sum of `depth_m` over water pixels times pixel area.
 *
 * # Safety
 * `mask` (bytes) and `depth_m` (doubles) must each hold `height * width`
 * values.
 */
enum HcStatus hc_water_volume(const uint8_t *mask_ptr,
                              const double *depth_m,
                              size_t height,
                              size_t width,
                              double pixel_area_m2,
                              double *out_volume_m3);

/**
 * Despeckling objective `alpha1*MSE + beta1*(1-SSIM) + gamma1*TV`.
 *
 * # Safety
 * `pred`, `target` must point to `height * width` floats.
 */
enum HcStatus hc_speckle_loss(const float *pred,
                              const float *target,
                              size_t height,
                              size_t width,
                              double alpha1,
                              double beta1,
                              double gamma1,
                              struct HcLossTerms *out_terms);

/**
 * Segmentation objective `alpha2*BCE + beta2*gap`.
 *
 * # Safety
 * `prob` (floats) and `target` (0/1 bytes) must hold `height * width`
 * values.
 */
enum HcStatus hc_seg_loss(const float *prob,
                          const uint8_t *target,
                          size_t height,
                          size_t width,
                          double alpha2,
                          double beta2,
                          double epsilon,
                          struct HcLossTerms *out_terms);

/**
 * Forecast objective `alpha3*MSE + beta3*(1-SSIM) + gamma3*TSL`, with the
 * smoothness term over `[context, pred]`.
 *
 * # Safety
 * `pred`, `target`, `context` must point to `height * width` floats.
 */
enum HcStatus hc_forecast_loss(const float *pred,
                               const float *target,
                               const float *context,
                               size_t height,
                               size_t width,
                               double alpha3,
                               double beta3,
                               double gamma3,
                               struct HcLossTerms *out_terms);

/**
 * Loads a datacube container directory.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out_cube` must be
 * writable. Release the handle with [`hc_cube_free`].
 */
enum HcStatus hc_cube_load(const char *path, struct HcCube **out_cube);

/**
 * Writes the cube as a container directory.
 *
 * # Safety
 * `cube` must come from [`hc_cube_load`]; `path` as in [`hc_cube_load`].
 */
enum HcStatus hc_cube_save(const struct HcCube *cube, const char *path);

/**
 * Releases a cube. Null is ignored.
 *
 * # Safety
 * `cube` must come from [`hc_cube_load`] and not be used afterwards.
 */
void hc_cube_free(struct HcCube *cube);

/**
 * Cube dimensions `(timesteps, height, width, bands)`.
 *
 * # Safety
 * `cube` must be a live handle; outputs may be null.
 */
enum HcStatus hc_cube_shape(const struct HcCube *cube,
                            size_t *out_timesteps,
                            size_t *out_height,
                            size_t *out_width,
                            size_t *out_bands);

/**
 * Copies one band frame (`height * width` floats) into `out_frame`.
 * `band` is a band name such as `"VV"` or `"NIR"`.
 *
 * # Safety
 * `cube` must be a live handle; `out_frame` must hold `len` floats.
 */
enum HcStatus hc_cube_frame(const struct HcCube *cube,
                            size_t timestep,
                            const char *band,
                            float *out_frame,
                            size_t len);

/**
 * Builds a series from `count` stacked masks (`count * height * width`
 * bytes) dated by `days_since_epoch`, with a depth raster in metres.
 *
 * # Safety
 * Pointers must hold the stated number of elements; release the handle
 * with [`hc_series_free`].
 */
enum HcStatus hc_series_build(const uint8_t *masks,
                              const int64_t *days_since_epoch,
                              size_t count,
                              const double *depth_m,
                              size_t height,
                              size_t width,
                              double pixel_area_m2,
                              struct HcSeries **out_series);

/**
 * Releases a series. Null is ignored.
 *
 * # Safety
 * `series` must come from [`hc_series_build`] and not be used afterwards.
 */
void hc_series_free(struct HcSeries *series);

/**
 * Number of records in the series.
 *
 * # Safety
 * `series` must be a live handle.
 */
enum HcStatus hc_series_len(const struct HcSeries *series, size_t *out_len);

/**
 * Record `index` of the series.
 *
 * # Safety
 * `series` must be a live handle.
 */
enum HcStatus hc_series_get(const struct HcSeries *series,
                            size_t index,
                            struct HcHydroRecord *out_record);

/**
 * Slope per timestep of the volume trend (centred moving average of
 * window `seasonal_period`).
 *
 * # Safety
 * `series` must be a live handle.
 */
enum HcStatus hc_series_volume_slope(const struct HcSeries *series,
                                     size_t seasonal_period,
                                     double *out_slope);

/**
 * Writes `date,area_m2,volume_m3,pixels` to `path`.
 *
 * # Safety
 * `series` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum HcStatus hc_series_write_csv(const struct HcSeries *series, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYDROCUBE_H */
