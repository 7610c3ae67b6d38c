#ifndef FUSIONDET_H
#define FUSIONDET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdLidarKind {
  FD_LIDAR_KIND_RANGE = 0,
  FD_LIDAR_KIND_SPARSE = 1,
  FD_LIDAR_KIND_DENSE = 2,
} FdLidarKind;

typedef enum FdStatus {
  FD_STATUS_OK = 0,
  FD_STATUS_NULL_POINTER = 1,
  FD_STATUS_INVALID_ARGUMENT = 2,
  // Malformed input data (calibration text, point cloud, checkpoint).
  FD_STATUS_INVALID_DATA = 3,
  FD_STATUS_IO = 4,
  // Point at zero camera depth.
  FD_STATUS_NOT_PROJECTABLE = 5,
  FD_STATUS_BUFFER_TOO_SMALL = 6,
  FD_STATUS_INTERNAL = 7,
  FD_STATUS_PANIC = 8,
} FdStatus;

// Camera model plus lidar-to-camera transform.
typedef struct FdCalibration FdCalibration;

// Single-channel float image; non-returns are `+inf`.
typedef struct FdDepthImage FdDepthImage;

typedef struct FdDetector FdDetector;

// Axis-aligned detection in image pixels.
typedef struct FdBox {
  double x1;
  double y1;
  double x2;
  double y2;
  uint32_t class_id;
  double score;
} FdBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message (NUL-terminated, truncated to fit) into
// `buf` and returns the full message length excluding the terminator.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t fd_last_error_message(char *buf, size_t cap);

// Parses KITTI calibration text (left color camera) for an image of the
// given size.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum FdStatus fd_calibration_from_kitti(const char *text,
                                        uint32_t width,
                                        uint32_t height,
                                        struct FdCalibration **out);

// Builds a calibration from explicit parameters. `rotation` is row-major
// 3x3, `kappa` holds five distortion coefficients.
//
// # Safety
// `kappa` must point to 5 doubles, `rotation` to 9 and `translation` to 3.
enum FdStatus fd_calibration_new(double fx,
                                 double fy,
                                 double ox,
                                 double oy,
                                 double skew,
                                 const double *kappa,
                                 uint32_t width,
                                 uint32_t height,
                                 const double *rotation,
                                 const double *translation,
                                 struct FdCalibration **out);

// # Safety
// `calib` must be null or a handle from this library not yet freed.
void fd_calibration_free(struct FdCalibration *calib);

// Projects a lidar-frame point to distorted pixel coordinates.
//
// # Safety
// `calib` must be a live handle; `u` and `v` must be writable.
enum FdStatus fd_project_point(const struct FdCalibration *calib,
                               double x,
                               double y,
                               double z,
                               double *u,
                               double *v);

// Builds a lidar representation from `count` points laid out as
// `x, y, z, intensity` float quadruples (the Velodyne `.bin` layout).
// `kind` is an [`FdLidarKind`] value; `window` is the densify
// neighborhood and is ignored for other kinds.
//
// # Safety
// `points` must point to `4 * count` floats; `calib` must be a live handle.
enum FdStatus fd_depth_from_points(const struct FdCalibration *calib,
                                   const float *points,
                                   size_t count,
                                   uint32_t kind,
                                   uint32_t window,
                                   struct FdDepthImage **out);

// Wraps a caller-owned row-major buffer; the values are copied.
//
// # Safety
// `data` must point to `width * height` floats.
enum FdStatus fd_depth_image_new(const float *data,
                                 uint32_t width,
                                 uint32_t height,
                                 struct FdDepthImage **out);

// Fills empty pixels with the mean of the finite values in a `window`
// square around them.
//
// # Safety
// `img` must be a live handle; `out` must be writable.
enum FdStatus fd_depth_densify(const struct FdDepthImage *img,
                               uint32_t window,
                               struct FdDepthImage **out);

// # Safety
// `img` must be a live handle; `width` and `height` must be writable.
enum FdStatus fd_depth_image_dims(const struct FdDepthImage *img,
                                  uint32_t *width,
                                  uint32_t *height);

// Borrowed pointer to `width * height` row-major floats, valid until the
// handle is freed. Null for a null handle.
//
// # Safety
// `img` must be null or a live handle.
const float *fd_depth_image_data(const struct FdDepthImage *img);

// # Safety
// `img` must be null or a handle from this library not yet freed.
void fd_depth_image_free(struct FdDepthImage *img);

// Loads a detector checkpoint written by `fusiondet train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FdStatus fd_detector_load(const char *path, struct FdDetector **out);

// # Safety
// `det` must be null or a handle from this library not yet freed.
void fd_detector_free(struct FdDetector *det);

// Number of object classes the detector predicts.
//
// # Safety
// `det` must be null or a live handle.
uint32_t fd_detector_num_classes(const struct FdDetector *det);

// Runs detection on an interleaved RGB8 image and a lidar image of the
// detector's representation (may be null for camera-only detectors).
// Writes at most `cap` boxes and stores the total in `count`; returns
// [`FdStatus::BufferTooSmall`] when `cap` was insufficient.
//
// # Safety
// `rgb` must point to `3 * width * height` bytes, `boxes` to `cap` slots
// (or be null with `cap == 0`), and `count` must be writable.
enum FdStatus fd_detector_detect(const struct FdDetector *det,
                                 const uint8_t *rgb,
                                 uint32_t width,
                                 uint32_t height,
                                 const struct FdDepthImage *lidar,
                                 double score_threshold,
                                 struct FdBox *boxes,
                                 size_t cap,
                                 size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSIONDET_H */
