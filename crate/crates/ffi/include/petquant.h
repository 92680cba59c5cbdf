#ifndef PETQUANT_H
#define PETQUANT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PqStatus {
  PQ_STATUS_OK = 0,
  PQ_STATUS_NULL_POINTER = 1,
  PQ_STATUS_INVALID_UTF8 = 2,
  PQ_STATUS_IO = 3,
  PQ_STATUS_FORMAT = 4,
  PQ_STATUS_DATA = 5,
  PQ_STATUS_UNIT = 6,
  PQ_STATUS_PARAMETER = 7,
  PQ_STATUS_DEGENERATE = 8,
  PQ_STATUS_SHAPE = 9,
  PQ_STATUS_EMPTY_REGION = 10,
  PQ_STATUS_SPEC = 11,
  PQ_STATUS_MANIFEST = 12,
  PQ_STATUS_DERIVATION = 13,
  PQ_STATUS_PANIC = 99,
} PqStatus;

typedef enum PqUnit {
  PQ_UNIT_ACTIVITY_CONCENTRATION = 0,
  PQ_UNIT_SUV = 1,
  PQ_UNIT_ARBITRARY = 2,
} PqUnit;

typedef enum PqSegmentMethod {
  // Fixed fraction of the ROI maximum.
  PQ_SEGMENT_METHOD_PCT = 0,
  // Iterative contrast-based threshold.
  PQ_SEGMENT_METHOD_CONTRAST = 1,
} PqSegmentMethod;

// Opaque binary mask.
typedef struct PqMask PqMask;

// Opaque scalar volume.
typedef struct PqVolume PqVolume;

typedef struct PqBiomarkers {
  double suv_max;
  double suv_mean;
  double mtv_cm3;
  double tlg;
  size_t voxel_count;
} PqBiomarkers;

// Undefined ratios are NaN.
typedef struct PqDelta {
  double d_suv_max;
  double d_mtv_cm3;
  double d_tlg;
  double pct_d_suv_max;
  double mtv_ratio;
} PqDelta;

// Undefined metrics are NaN.
typedef struct PqComparison {
  double dsc;
  double iou;
  double sensitivity;
  double hd_mm;
} PqComparison;

typedef struct PqLossParams {
  double alpha;
  double beta;
  double gamma;
  double epsilon;
  double smooth;
} PqLossParams;

typedef struct PqTTest {
  double t;
  double p;
  size_t df;
  double mean_diff;
  double sd;
  double sem;
  bool significant;
} PqTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a success.
const char *pq_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pq_version(void);

// Creates a volume from `len = dims[0]*dims[1]*dims[2]` values in x-fastest order.
enum PqStatus pq_volume_new(const size_t *dims,
                            const double *spacing,
                            const double *values,
                            size_t len,
                            enum PqUnit unit,
                            struct PqVolume **out_volume);

// Reads a `.nii` or `.json` sidecar volume.
enum PqStatus pq_volume_read(const char *path, struct PqVolume **out_volume);

enum PqStatus pq_volume_write(const struct PqVolume *volume, const char *path);

void pq_volume_free(struct PqVolume *volume);

// Writes 3 dims and 3 spacings (mm).
enum PqStatus pq_volume_geometry(const struct PqVolume *volume,
                                 size_t *out_dims,
                                 double *out_spacing);

enum PqStatus pq_volume_unit(const struct PqVolume *volume, enum PqUnit *out_unit);

// Borrowed pointer to the voxel values, valid while the handle lives.
enum PqStatus pq_volume_data(const struct PqVolume *volume,
                             const double **out_data,
                             size_t *out_len);

// Converts an activity-concentration volume to body-weight SUV.
enum PqStatus pq_volume_to_suv(const struct PqVolume *volume,
                               double dose_mbq,
                               double weight_kg,
                               struct PqVolume **out_volume);

// Creates a mask; any non-zero byte is foreground.
enum PqStatus pq_mask_new(const size_t *dims,
                          const double *spacing,
                          const uint8_t *bits,
                          size_t len,
                          struct PqMask **out_mask);

enum PqStatus pq_mask_read(const char *path, struct PqMask **out_mask);

enum PqStatus pq_mask_write(const struct PqMask *mask, const char *path);

void pq_mask_free(struct PqMask *mask);

enum PqStatus pq_mask_voxel_count(const struct PqMask *mask, size_t *out_count);

// Segments with default settings for the chosen method. `pct` is only used by
// `PQ_SEGMENT_METHOD_PCT`; pass a non-positive value for the default.
enum PqStatus pq_segment(const struct PqVolume *volume,
                         enum PqSegmentMethod method,
                         double pct,
                         struct PqMask **out_mask);

// Biomarkers of an SUV volume under a mask.
enum PqStatus pq_biomarkers_extract(const struct PqVolume *volume,
                                    const struct PqMask *mask,
                                    struct PqBiomarkers *out_set);

enum PqStatus pq_biomarkers_delta(const struct PqBiomarkers *baseline,
                                  const struct PqBiomarkers *followup,
                                  struct PqDelta *out_delta);

enum PqStatus pq_compare(const struct PqMask *gt,
                         const struct PqMask *pred,
                         struct PqComparison *out_cmp);

// Defaults: alpha 0.7, beta 0.3, gamma 1.5, epsilon 0.7, smooth 1e-6.
struct PqLossParams pq_loss_params_default(void);

// Weighted focal-Tversky + BCE loss over flat arrays of `len` probabilities.
enum PqStatus pq_loss_combined(const double *y,
                               const double *yhat,
                               size_t len,
                               struct PqLossParams params,
                               double *out_loss);

// Gradient of [`pq_loss_combined`] with respect to `yhat`, written to `out_grad[0..len]`.
enum PqStatus pq_loss_grad(const double *y,
                           const double *yhat,
                           size_t len,
                           struct PqLossParams params,
                           double *out_grad);

// `1 / mean(ratios)`.
enum PqStatus pq_qc_derive_threshold(const double *ratios, size_t len, double *out_threshold);

// Paired t-test on `after - before`.
enum PqStatus pq_paired_ttest(const double *before,
                              const double *after,
                              size_t len,
                              struct PqTTest *out_test);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PETQUANT_H */
