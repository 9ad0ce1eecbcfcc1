//! C ABI for the `edvo` tracker and trajectory metrics.
//!
//! Every fallible function returns an [`EdvoStatus`]; on failure the
//! message is available from [`edvo_last_error`] on the same thread.
//! Trackers are opaque heap objects released with [`edvo_tracker_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use edvo::edges::EdgeDetectorKind;
use edvo::evaluation::{ate, rpe, EvalConfig, Trajectory};
use edvo::geometry::{CameraIntrinsics, PoseSE3};
use edvo::imaging::{DepthImage, GrayImage};
use edvo::tracker::{Frame, Tracker, TrackerConfig};
use edvo::Error;
use nalgebra::Vector3;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdvoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Malformed or insufficient input data (e.g. no overlapping timestamps).
    DataError = 4,
    /// Alignment could not be computed for this frame.
    TrackingError = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdvoDetector {
    Canny = 0,
    Log = 1,
    Sobel = 2,
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdvoIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Tracker settings; obtain defaults from [`edvo_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdvoConfig {
    pub detector: EdvoDetector,
    pub pyramid_levels: u32,
    pub max_iterations_per_level: u32,
    pub convergence_eps: f64,
    pub huber_tuning: f64,
    /// 0 tracks frame to frame.
    pub keyframe_interval: u32,
    pub use_motion_prior: bool,
    pub min_valid_points: u32,
}

/// Rigid transform as translation plus unit quaternion `(x, y, z, w)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdvoPose {
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdvoStampedPose {
    pub timestamp: f64,
    pub pose: EdvoPose,
}

/// Output of one tracked frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdvoFrameResult {
    /// Camera-to-world pose of the frame.
    pub world_pose: EdvoPose,
    /// Pose of the frame relative to its reference frame.
    pub relative_pose: EdvoPose,
    pub level_iterations: [u32; 3],
    pub final_error: f64,
    pub inliers: u32,
    pub pixels: u32,
    pub latency_ms: f64,
    pub lost: bool,
    pub became_keyframe: bool,
}

/// Opaque tracking session.
pub struct EdvoTracker {
    inner: Tracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> EdvoStatus {
    match err {
        Error::InvalidArgument(_) | Error::InvalidDepth(_) | Error::LevelTooDeep(_) | Error::ImageTooSmall { .. } => {
            EdvoStatus::InvalidArgument
        }
        Error::DimensionMismatch { .. } => EdvoStatus::DimensionMismatch,
        Error::InsufficientPoints { .. }
        | Error::InsufficientOverlap { .. }
        | Error::DegenerateGeometry
        | Error::BehindCamera(_) => EdvoStatus::TrackingError,
        _ => EdvoStatus::DataError,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (EdvoStatus, String)>) -> EdvoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EdvoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            EdvoStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (EdvoStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (EdvoStatus, String) {
    (EdvoStatus::NullPointer, format!("{what} is null"))
}

fn to_pose(p: &PoseSE3) -> EdvoPose {
    EdvoPose {
        translation: [p.translation.x, p.translation.y, p.translation.z],
        quaternion: p.quaternion(),
    }
}

fn from_pose(p: &EdvoPose) -> Result<PoseSE3, Error> {
    let t = Vector3::from(p.translation);
    if !t.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite translation".into()));
    }
    PoseSE3::from_quaternion(t, p.quaternion)
}

impl From<EdvoDetector> for EdgeDetectorKind {
    fn from(d: EdvoDetector) -> Self {
        match d {
            EdvoDetector::Canny => EdgeDetectorKind::Canny,
            EdvoDetector::Log => EdgeDetectorKind::Log,
            EdvoDetector::Sobel => EdgeDetectorKind::Sobel,
        }
    }
}

impl From<EdgeDetectorKind> for EdvoDetector {
    fn from(d: EdgeDetectorKind) -> Self {
        match d {
            EdgeDetectorKind::Canny => EdvoDetector::Canny,
            EdgeDetectorKind::Log => EdvoDetector::Log,
            EdgeDetectorKind::Sobel => EdvoDetector::Sobel,
        }
    }
}

impl EdvoConfig {
    fn to_tracker_config(self) -> TrackerConfig {
        TrackerConfig {
            detector: self.detector.into(),
            pyramid_levels: self.pyramid_levels as usize,
            max_iterations_per_level: self.max_iterations_per_level as usize,
            convergence_eps: self.convergence_eps,
            huber_tuning: self.huber_tuning,
            keyframe_interval: self.keyframe_interval as usize,
            use_motion_prior: self.use_motion_prior,
            min_valid_points: self.min_valid_points as usize,
            ..TrackerConfig::default()
        }
    }
}

/// The library's default tracker settings.
#[no_mangle]
pub extern "C" fn edvo_config_default() -> EdvoConfig {
    let c = TrackerConfig::default();
    EdvoConfig {
        detector: c.detector.into(),
        pyramid_levels: c.pyramid_levels as u32,
        max_iterations_per_level: c.max_iterations_per_level as u32,
        convergence_eps: c.convergence_eps,
        huber_tuning: c.huber_tuning,
        keyframe_interval: c.keyframe_interval as u32,
        use_motion_prior: c.use_motion_prior,
        min_valid_points: c.min_valid_points as u32,
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn edvo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn edvo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a tracker. `config` may be null for defaults. On success
/// `*out` receives a handle owned by the caller.
///
/// # Safety
/// `intrinsics` and `out` must be valid pointers; `config` must be null
/// or valid.
#[no_mangle]
pub unsafe extern "C" fn edvo_tracker_new(
    intrinsics: *const EdvoIntrinsics,
    config: *const EdvoConfig,
    out: *mut *mut EdvoTracker,
) -> EdvoStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let k = intrinsics.as_ref().ok_or_else(|| null("intrinsics"))?;
        let cfg = config.as_ref().copied().unwrap_or_else(|| edvo_config_default());
        let k = CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width as usize, k.height as usize).map_err(lib_err)?;
        let inner = Tracker::new(k, cfg.to_tracker_config()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EdvoTracker { inner }));
        Ok(())
    })
}

/// Releases a tracker; null is ignored.
///
/// # Safety
/// `tracker` must be null or a handle from [`edvo_tracker_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn edvo_tracker_free(tracker: *mut EdvoTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Tracks one frame. `gray` holds `width*height` intensities in [0, 1] and
/// `depth` as many depths in meters (0 marks missing depth), both row-major.
/// The first frame anchors the world frame at identity.
///
/// # Safety
/// `tracker` must be a live handle; `gray` and `depth` must point to
/// `width*height` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn edvo_tracker_track(
    tracker: *mut EdvoTracker,
    timestamp: f64,
    gray: *const f32,
    depth: *const f32,
    width: u32,
    height: u32,
    out: *mut EdvoFrameResult,
) -> EdvoStatus {
    guard(|| {
        let tracker = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if gray.is_null() || depth.is_null() {
            return Err(null("image buffer"));
        }
        let (w, h) = (width as usize, height as usize);
        let n = w * h;
        let g = std::slice::from_raw_parts(gray, n).iter().map(|v| *v as f64).collect();
        let d = std::slice::from_raw_parts(depth, n).iter().map(|v| *v as f64).collect();
        let frame = Frame::new(
            timestamp,
            GrayImage::new(w, h, g).map_err(lib_err)?,
            DepthImage::new(w, h, d).map_err(lib_err)?,
        )
        .map_err(lib_err)?;
        let r = tracker.inner.process(frame).map_err(lib_err)?;
        let d = &r.diagnostics;
        *out = EdvoFrameResult {
            world_pose: to_pose(&r.world_pose),
            relative_pose: to_pose(&r.relative_pose),
            level_iterations: d.level_iterations.map(|i| i as u32),
            final_error: d.final_error,
            inliers: d.inliers as u32,
            pixels: d.pixels as u32,
            latency_ms: d.latency_ms,
            lost: d.lost,
            became_keyframe: r.became_keyframe,
        };
        Ok(())
    })
}

unsafe fn trajectory(poses: *const EdvoStampedPose, len: usize, what: &str) -> Result<Trajectory, (EdvoStatus, String)> {
    if poses.is_null() && len > 0 {
        return Err(null(what));
    }
    let slice = if len == 0 { &[][..] } else { std::slice::from_raw_parts(poses, len) };
    let mut entries = Vec::with_capacity(len);
    for p in slice {
        entries.push((p.timestamp, from_pose(&p.pose).map_err(lib_err)?));
    }
    Trajectory::new(entries).map_err(lib_err)
}

type Metric = fn(&Trajectory, &Trajectory, &EvalConfig) -> edvo::Result<edvo::evaluation::MetricResult>;

unsafe fn metric(
    f: Metric,
    gt: *const EdvoStampedPose,
    gt_len: usize,
    est: *const EdvoStampedPose,
    est_len: usize,
    cfg: EvalConfig,
    out_rmse: *mut f64,
) -> EdvoStatus {
    guard(|| {
        let out = out_rmse.as_mut().ok_or_else(|| null("out_rmse"))?;
        let gt = trajectory(gt, gt_len, "gt")?;
        let est = trajectory(est, est_len, "est")?;
        *out = f(&gt, &est, &cfg).map_err(lib_err)?.rmse;
        Ok(())
    })
}

/// Translational relative pose error RMSE in m/s over `delta_t` seconds.
///
/// # Safety
/// `gt`/`est` must point to `gt_len`/`est_len` poses sorted by timestamp;
/// `out_rmse` must be valid.
#[no_mangle]
pub unsafe extern "C" fn edvo_rpe(
    gt: *const EdvoStampedPose,
    gt_len: usize,
    est: *const EdvoStampedPose,
    est_len: usize,
    delta_t: f64,
    out_rmse: *mut f64,
) -> EdvoStatus {
    let cfg = EvalConfig {
        delta_t,
        ..Default::default()
    };
    metric(rpe, gt, gt_len, est, est_len, cfg, out_rmse)
}

/// Absolute trajectory error RMSE in meters after rigid alignment.
///
/// # Safety
/// As for [`edvo_rpe`].
#[no_mangle]
pub unsafe extern "C" fn edvo_ate(
    gt: *const EdvoStampedPose,
    gt_len: usize,
    est: *const EdvoStampedPose,
    est_len: usize,
    out_rmse: *mut f64,
) -> EdvoStatus {
    metric(ate, gt, gt_len, est, est_len, EvalConfig::default(), out_rmse)
}
