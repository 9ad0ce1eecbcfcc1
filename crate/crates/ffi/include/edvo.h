#ifndef EDVO_H
#define EDVO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EdvoDetector {
  EDVO_DETECTOR_CANNY = 0,
  EDVO_DETECTOR_LOG = 1,
  EDVO_DETECTOR_SOBEL = 2,
} EdvoDetector;

// Result code of every fallible call.
typedef enum EdvoStatus {
  EDVO_STATUS_OK = 0,
  EDVO_STATUS_NULL_POINTER = 1,
  EDVO_STATUS_INVALID_ARGUMENT = 2,
  EDVO_STATUS_DIMENSION_MISMATCH = 3,
  // Malformed or insufficient input data (e.g. no overlapping timestamps).
  EDVO_STATUS_DATA_ERROR = 4,
  // Alignment could not be computed for this frame.
  EDVO_STATUS_TRACKING_ERROR = 5,
  // A Rust panic was caught at the boundary.
  EDVO_STATUS_PANIC = 6,
} EdvoStatus;

// Opaque tracking session.
typedef struct EdvoTracker EdvoTracker;

// Tracker settings; obtain defaults from [`edvo_config_default`].
typedef struct EdvoConfig {
  enum EdvoDetector detector;
  uint32_t pyramid_levels;
  uint32_t max_iterations_per_level;
  double convergence_eps;
  double huber_tuning;
  // 0 tracks frame to frame.
  uint32_t keyframe_interval;
  bool use_motion_prior;
  uint32_t min_valid_points;
} EdvoConfig;

// Pinhole intrinsics in pixels.
typedef struct EdvoIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} EdvoIntrinsics;

// Rigid transform as translation plus unit quaternion `(x, y, z, w)`.
typedef struct EdvoPose {
  double translation[3];
  double quaternion[4];
} EdvoPose;

// Output of one tracked frame.
typedef struct EdvoFrameResult {
  // Camera-to-world pose of the frame.
  struct EdvoPose world_pose;
  // Pose of the frame relative to its reference frame.
  struct EdvoPose relative_pose;
  uint32_t level_iterations[3];
  double final_error;
  uint32_t inliers;
  uint32_t pixels;
  double latency_ms;
  bool lost;
  bool became_keyframe;
} EdvoFrameResult;

typedef struct EdvoStampedPose {
  double timestamp;
  struct EdvoPose pose;
} EdvoStampedPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The library's default tracker settings.
struct EdvoConfig edvo_config_default(void);

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *edvo_last_error(void);

// Library version as a static NUL-terminated string.
const char *edvo_version(void);

// Creates a tracker. `config` may be null for defaults. On success
// `*out` receives a handle owned by the caller.
//
// # Safety
// `intrinsics` and `out` must be valid pointers; `config` must be null
// or valid.
enum EdvoStatus edvo_tracker_new(const struct EdvoIntrinsics *intrinsics,
                                 const struct EdvoConfig *config,
                                 struct EdvoTracker **out);

// Releases a tracker; null is ignored.
//
// # Safety
// `tracker` must be null or a handle from [`edvo_tracker_new`] not yet freed.
void edvo_tracker_free(struct EdvoTracker *tracker);

// Tracks one frame. `gray` holds `width*height` intensities in [0, 1] and
// `depth` as many depths in meters (0 marks missing depth), both row-major.
// The first frame anchors the world frame at identity.
//
// # Safety
// `tracker` must be a live handle; `gray` and `depth` must point to
// `width*height` floats; `out` must be valid.
enum EdvoStatus edvo_tracker_track(struct EdvoTracker *tracker,
                                   double timestamp,
                                   const float *gray,
                                   const float *depth,
                                   uint32_t width,
                                   uint32_t height,
                                   struct EdvoFrameResult *out);

// Translational relative pose error RMSE in m/s over `delta_t` seconds.
//
// # Safety
// `gt`/`est` must point to `gt_len`/`est_len` poses sorted by timestamp;
// `out_rmse` must be valid.
enum EdvoStatus edvo_rpe(const struct EdvoStampedPose *gt,
                         size_t gt_len,
                         const struct EdvoStampedPose *est,
                         size_t est_len,
                         double delta_t,
                         double *out_rmse);

// Absolute trajectory error RMSE in meters after rigid alignment.
//
// # Safety
// As for [`edvo_rpe`].
enum EdvoStatus edvo_ate(const struct EdvoStampedPose *gt,
                         size_t gt_len,
                         const struct EdvoStampedPose *est,
                         size_t est_len,
                         double *out_rmse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDVO_H */
