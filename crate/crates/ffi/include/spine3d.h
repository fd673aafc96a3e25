/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SPINE3D_H
#define SPINE3D_H

#include <stdbool.h>
#include <stddef.h>

typedef enum Spine3dStatus {
  SPINE3D_STATUS_OK = 0,
  SPINE3D_STATUS_NULL_POINTER = 1,
  SPINE3D_STATUS_INVALID_ARGUMENT = 2,
  SPINE3D_STATUS_SHAPE = 3,
  SPINE3D_STATUS_EMPTY_CURVE = 4,
  SPINE3D_STATUS_INSUFFICIENT_OVERLAP = 5,
  SPINE3D_STATUS_IO = 6,
  SPINE3D_STATUS_FORMAT = 7,
  SPINE3D_STATUS_CONFIG = 8,
  SPINE3D_STATUS_PANIC = 9,
} Spine3dStatus;

typedef enum Spine3dSeverity {
  SPINE3D_SEVERITY_NORMAL_MILD = 0,
  SPINE3D_SEVERITY_MODERATE = 1,
  SPINE3D_SEVERITY_SEVERE = 2,
} Spine3dSeverity;

/**
 * Opaque 3D Cobb result.
 */
typedef struct Spine3dCobbResult Spine3dCobbResult;

/**
 * Opaque loaded generator.
 */
typedef struct Spine3dGenerator Spine3dGenerator;

/**
 * Curve-extraction and fitting options for [`spine3d_assess_maps`].
 */
typedef struct Spine3dGeometryOptions {
  double threshold;
  size_t degree;
  size_t samples;
  bool include_sagittal;
} Spine3dGeometryOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spine3d_version(void);

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *spine3d_last_error(void);

/**
 * Default extraction threshold 0.5, degree 6, 256 samples, coronal landmarks only.
 */
struct Spine3dGeometryOptions spine3d_geometry_options_default(void);

/**
 * Severity grade of a Cobb angle in degrees.
 *
 * # Safety
 * `out` must be null or valid for writing one value.
 */
enum Spine3dStatus spine3d_grade(double angle_deg, enum Spine3dSeverity *out);

/**
 * Measure the 3D Cobb angle from two `h x w` row-major curve maps with
 * values in `[0, 1]`. `options` may be null for the defaults. On success
 * `*out` receives a handle to release with [`spine3d_cobb_result_free`].
 *
 * # Safety
 * `pa_map` and `lat_map` must point to `h * w` readable doubles, `options`
 * must be null or valid, and `out` must be valid for writing a pointer.
 */
enum Spine3dStatus spine3d_assess_maps(const double *pa_map,
                                       const double *lat_map,
                                       size_t h,
                                       size_t w,
                                       const struct Spine3dGeometryOptions *options,
                                       struct Spine3dCobbResult **out);

/**
 * # Safety
 * `result` must be a live handle from [`spine3d_assess_maps`].
 */
double spine3d_cobb_result_max_angle(const struct Spine3dCobbResult *result);

/**
 * # Safety
 * `result` must be a live handle and `out` valid for writing.
 */
enum Spine3dStatus spine3d_cobb_result_severity(const struct Spine3dCobbResult *result,
                                                enum Spine3dSeverity *out);

/**
 * Whether the maximum angle lies on a grade boundary (20 or 40 degrees).
 *
 * # Safety
 * `result` must be a live handle.
 */
bool spine3d_cobb_result_boundary_case(const struct Spine3dCobbResult *result);

/**
 * Number of landmarks, curve endpoints included.
 *
 * # Safety
 * `result` must be a live handle.
 */
size_t spine3d_cobb_result_landmark_count(const struct Spine3dCobbResult *result);

/**
 * Copy up to `cap` landmark heights (normalized z) into `buf`; returns the
 * total number available.
 *
 * # Safety
 * `result` must be a live handle and `buf` valid for `cap` writes.
 */
size_t spine3d_cobb_result_landmarks(const struct Spine3dCobbResult *result,
                                     double *buf,
                                     size_t cap);

/**
 * Number of segment angles (landmarks minus one).
 *
 * # Safety
 * `result` must be a live handle.
 */
size_t spine3d_cobb_result_segment_count(const struct Spine3dCobbResult *result);

/**
 * Copy up to `cap` segment angles in degrees into `buf`; returns the total
 * number available.
 *
 * # Safety
 * `result` must be a live handle and `buf` valid for `cap` writes.
 */
size_t spine3d_cobb_result_segment_angles(const struct Spine3dCobbResult *result,
                                          double *buf,
                                          size_t cap);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void spine3d_cobb_result_free(struct Spine3dCobbResult *result);

/**
 * Load a generator checkpoint from a NUL-terminated UTF-8 path.
 *
 * # Safety
 * `path` must be a valid C string and `out` valid for writing a pointer.
 */
enum Spine3dStatus spine3d_generator_load(const char *path, struct Spine3dGenerator **out);

/**
 * Run the generator on an `h x w` RGB image (row-major, interleaved
 * channels, values in `[0, 1]`), writing the `h x w` curve map to `out_map`.
 *
 * # Safety
 * `generator` must be a live handle, `rgb` must point to `h * w * 3`
 * readable doubles and `out_map` to `h * w` writable doubles.
 */
enum Spine3dStatus spine3d_generator_forward(const struct Spine3dGenerator *generator,
                                             const double *rgb,
                                             size_t h,
                                             size_t w,
                                             double *out_map);

/**
 * # Safety
 * `generator` must be null or a handle not yet freed.
 */
void spine3d_generator_free(struct Spine3dGenerator *generator);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINE3D_H */
