//! Edge-direct frame tracking.
//!
//! Each new frame is aligned against a reference frame: edges are detected
//! on the *new* image and used as a mask on the *reference* image; the
//! masked reference pixels are lifted to 3D with the reference depth and
//! the warp minimizing their Huber-weighted photometric error is found by
//! coarse-to-fine Gauss-Newton.

pub mod ablation;
pub mod residuals;
pub mod solver;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edges::{EdgeDetectorKind, EdgeMask};
use crate::error::{Error, Result};
use crate::evaluation::Trajectory;
use crate::geometry::{compose, log_se3, CameraIntrinsics, PoseSE3, Twist, MAX_LEVEL};
use crate::imaging::{build_pyramid, DepthImage, GrayImage, PyramidLevel};
use crate::sequence::FrameSource;

pub use residuals::{
    assemble_normal_equations, build_reference_points, dense_photometric_rms, evaluate_residuals,
    evaluate_residuals_at, huber_weight, robust_scale, GradientSource, NormalEquations, ReferencePoint,
    ReferencePointSet, WarpedResidual,
};
pub use solver::{gauss_newton_at_level, LevelResult, SolverParams, Termination};

/// Keyframe interval used when none is configured but keyframes are required.
pub const DEFAULT_KEYFRAME_INTERVAL: usize = 4;

/// A timestamped grayscale image with registered depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub gray: GrayImage,
    pub depth: DepthImage,
}

impl Frame {
    pub fn new(timestamp: f64, gray: GrayImage, depth: DepthImage) -> Result<Self> {
        if gray.dims() != depth.dims() {
            return Err(Error::DimensionMismatch {
                expected: gray.dims(),
                actual: depth.dims(),
            });
        }
        Ok(Self {
            timestamp,
            gray,
            depth,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gray.dims()
    }
}

/// Which reference pixels feed the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PixelSampling {
    /// Every edge pixel with valid depth.
    #[default]
    AllEdges,
    /// A uniform random `fraction` of the edge pixels with valid depth.
    EdgeSubset { fraction: f64, seed: u64 },
    /// As many pixels as `EdgeSubset` would use, drawn from all valid-depth pixels.
    RandomPixels { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub detector: EdgeDetectorKind,
    pub pyramid_levels: usize,
    pub max_iterations_per_level: usize,
    pub convergence_eps: f64,
    /// Multiplier on the MAD-based robust scale giving the Huber threshold.
    pub huber_tuning: f64,
    /// Replace the reference every `n` frames; 0 tracks frame to frame.
    pub keyframe_interval: usize,
    pub use_motion_prior: bool,
    pub min_valid_points: usize,
    pub gradient: GradientSource,
    pub sampling: PixelSampling,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            detector: EdgeDetectorKind::Canny,
            pyramid_levels: 3,
            max_iterations_per_level: 20,
            convergence_eps: 1e-6,
            huber_tuning: 1.345,
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            use_motion_prior: true,
            min_valid_points: 300,
            gradient: GradientSource::CentralDifference,
            sampling: PixelSampling::AllEdges,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.pyramid_levels == 0 || self.pyramid_levels > MAX_LEVEL + 1 {
            return bad("pyramid_levels must be in 1..=3");
        }
        if self.max_iterations_per_level == 0 {
            return bad("max_iterations_per_level must be > 0");
        }
        if !(self.convergence_eps > 0.0) || !(self.huber_tuning > 0.0) {
            return bad("convergence_eps and huber_tuning must be > 0");
        }
        if self.min_valid_points == 0 {
            return bad("min_valid_points must be > 0");
        }
        match self.sampling {
            PixelSampling::EdgeSubset { fraction, .. } | PixelSampling::RandomPixels { fraction, .. }
                if !(fraction > 0.0 && fraction <= 1.0) =>
            {
                bad("sampling fraction must be in (0, 1]")
            }
            _ => Ok(()),
        }
    }

    fn solver_params(&self) -> SolverParams {
        SolverParams {
            max_iterations: self.max_iterations_per_level,
            convergence_eps: self.convergence_eps,
            huber_tuning: self.huber_tuning,
            min_valid_points: self.min_valid_points,
            gradient: self.gradient,
        }
    }
}

/// Everything carried from one frame to the next.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub reference: Frame,
    pub reference_pyramid: Vec<PyramidLevel>,
    pub reference_pose_world: PoseSE3,
    /// Warp (reference camera → previous frame's camera) estimated last time.
    pub last_to_reference: PoseSE3,
    /// Warp between the two most recent frames, as a twist.
    pub last_relative_motion: Twist,
    pub frames_since_keyframe: usize,
    /// Number of frames seen so far, including the first.
    pub frame_index: u64,
}

impl TrackerState {
    /// Starts a session with `first` as the reference at `world_pose`.
    pub fn new(first: Frame, intrinsics: &CameraIntrinsics, cfg: &TrackerConfig, world_pose: PoseSE3) -> Result<Self> {
        cfg.validate()?;
        let pyramid = build_pyramid(&first.gray, &first.depth, intrinsics, cfg.pyramid_levels)?;
        Ok(Self {
            reference: first,
            reference_pyramid: pyramid,
            reference_pose_world: world_pose,
            last_to_reference: PoseSE3::identity(),
            last_relative_motion: Twist::zero(),
            frames_since_keyframe: 0,
            frame_index: 1,
        })
    }
}

/// Per-frame record written to the diagnostics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDiagnostics {
    pub timestamp: f64,
    pub level_iterations: [usize; 3],
    pub final_error: f64,
    pub inliers: usize,
    /// Residual count at the finest level.
    pub pixels: usize,
    pub latency_ms: f64,
    pub lost: bool,
}

impl FrameDiagnostics {
    fn first(timestamp: f64) -> Self {
        Self {
            timestamp,
            level_iterations: [0; 3],
            final_error: 0.0,
            inliers: 0,
            pixels: 0,
            latency_ms: 0.0,
            lost: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Pose of the new camera in the reference camera's frame.
    pub relative_pose: PoseSE3,
    /// Pose of the new camera in the world frame.
    pub world_pose: PoseSE3,
    /// Estimated warp, reference camera → new camera.
    pub warp: PoseSE3,
    /// The motion-prior initialization the optimizer started from.
    pub initial_warp: PoseSE3,
    pub diagnostics: FrameDiagnostics,
    /// The new frame became the reference afterwards.
    pub became_keyframe: bool,
}

/// Initialization under the constant-motion assumption: the last
/// inter-frame motion applied on top of the previous frame's warp.
pub fn motion_prior_init(last_to_reference: &PoseSE3, last_relative_motion: &Twist) -> PoseSE3 {
    compose(last_relative_motion, last_to_reference)
}

fn mix_seed(seed: u64, frame: u64, level: usize) -> u64 {
    // SplitMix64 finalizer over the combined key.
    let mut z = seed
        .wrapping_add(frame.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((level as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_sorted(candidates: &[(usize, usize)], count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if count >= candidates.len() {
        return candidates.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, candidates.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| candidates[i]).collect()
}

/// Reference points for one level under the configured sampling mode.
fn select_points(
    reference: &PyramidLevel,
    mask: &EdgeMask,
    sampling: PixelSampling,
    frame_index: u64,
    min_valid_points: usize,
) -> Result<ReferencePointSet> {
    let (gray, depth, k) = (&reference.gray, &reference.depth, &reference.intrinsics);
    match sampling {
        PixelSampling::AllEdges => build_reference_points(gray, depth, mask, k, min_valid_points),
        PixelSampling::EdgeSubset { fraction, seed } | PixelSampling::RandomPixels { fraction, seed } => {
            let edges: Vec<(usize, usize)> = mask.iter().filter(|&(x, y)| depth.get(x, y) > 0.0).collect();
            let count = (fraction * edges.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, frame_index, reference.level));
            let chosen = if matches!(sampling, PixelSampling::EdgeSubset { .. }) {
                sample_sorted(&edges, count, &mut rng)
            } else {
                let (w, h) = depth.dims();
                let all: Vec<(usize, usize)> = (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .filter(|&(x, y)| depth.get(x, y) > 0.0)
                    .collect();
                sample_sorted(&all, count, &mut rng)
            };
            ReferencePointSet::from_pixels(gray, depth, k, chosen, min_valid_points)
        }
    }
}

/// Outcome of the coarse-to-fine alignment of one frame.
struct Alignment {
    warp: PoseSE3,
    level_iterations: [usize; 3],
    final_error: f64,
    inliers: usize,
    pixels: usize,
    lost: bool,
}

fn align(
    reference: &[PyramidLevel],
    new: &[PyramidLevel],
    init: &PoseSE3,
    cfg: &TrackerConfig,
    frame_index: u64,
) -> Result<Alignment> {
    let params = cfg.solver_params();
    let mut out = Alignment {
        warp: *init,
        level_iterations: [0; 3],
        final_error: 0.0,
        inliers: 0,
        pixels: 0,
        lost: false,
    };
    for level in (0..new.len()).rev() {
        let mask = cfg.detector.detect(&new[level].gray)?;
        let attempt = select_points(&reference[level], &mask, cfg.sampling, frame_index, cfg.min_valid_points)
            .and_then(|points| {
                let result = gauss_newton_at_level(&points, &new[level], &out.warp, &params)?;
                Ok((points.len(), result))
            });
        match attempt {
            Ok((pixels, result)) => {
                out.warp = result.warp;
                out.level_iterations[level] = result.iterations;
                if level == 0 {
                    out.final_error = result.final_error;
                    out.inliers = result.inliers;
                    out.pixels = pixels;
                }
            }
            // A coarse level without enough support is skipped; failing at
            // full resolution means tracking is lost.
            Err(Error::InsufficientPoints { .. } | Error::InsufficientOverlap { .. } | Error::DegenerateGeometry) => {
                if level == 0 {
                    out.lost = true;
                    out.warp = *init;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Tracks `new` against the state's reference and advances the state.
///
/// Tracking failures do not return an error: the motion-prior pose is
/// emitted instead and `diagnostics.lost` is set.
pub fn track_frame(
    state: TrackerState,
    new: Frame,
    intrinsics: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<(TrackResult, TrackerState)> {
    let start = Instant::now();
    cfg.validate()?;
    if new.dims() != state.reference.dims() {
        return Err(Error::DimensionMismatch {
            expected: state.reference.dims(),
            actual: new.dims(),
        });
    }
    let new_pyramid = build_pyramid(&new.gray, &new.depth, intrinsics, cfg.pyramid_levels)?;
    let init = if cfg.use_motion_prior {
        motion_prior_init(&state.last_to_reference, &state.last_relative_motion)
    } else {
        PoseSE3::identity()
    };

    let alignment = align(&state.reference_pyramid, &new_pyramid, &init, cfg, state.frame_index)?;
    let warp = alignment.warp;
    let relative_pose = warp.inverse();
    let world_pose = &state.reference_pose_world * &relative_pose;
    let last_relative_motion = log_se3(&(&warp * &state.last_to_reference.inverse()));

    let frames_since = state.frames_since_keyframe + 1;
    let became_keyframe = alignment.lost || cfg.keyframe_interval == 0 || frames_since >= cfg.keyframe_interval;
    let diagnostics = FrameDiagnostics {
        timestamp: new.timestamp,
        level_iterations: alignment.level_iterations,
        final_error: alignment.final_error,
        inliers: alignment.inliers,
        pixels: alignment.pixels,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        lost: alignment.lost,
    };

    let next = if became_keyframe {
        TrackerState {
            reference: new,
            reference_pyramid: new_pyramid,
            reference_pose_world: world_pose,
            last_to_reference: PoseSE3::identity(),
            last_relative_motion,
            frames_since_keyframe: 0,
            frame_index: state.frame_index + 1,
        }
    } else {
        TrackerState {
            last_to_reference: warp,
            last_relative_motion,
            frames_since_keyframe: frames_since,
            frame_index: state.frame_index + 1,
            ..state
        }
    };

    Ok((
        TrackResult {
            relative_pose,
            world_pose,
            warp,
            initial_warp: init,
            diagnostics,
            became_keyframe,
        },
        next,
    ))
}

/// Stateful tracking session; the first frame anchors the world frame.
#[derive(Debug)]
pub struct Tracker {
    intrinsics: CameraIntrinsics,
    config: TrackerConfig,
    initial_pose: PoseSE3,
    state: Option<TrackerState>,
}

impl Tracker {
    pub fn new(intrinsics: CameraIntrinsics, config: TrackerConfig) -> Result<Self> {
        intrinsics.validate()?;
        config.validate()?;
        Ok(Self {
            intrinsics,
            config,
            initial_pose: PoseSE3::identity(),
            state: None,
        })
    }

    /// World pose assigned to the first frame (identity by default).
    pub fn with_initial_pose(mut self, pose: PoseSE3) -> Self {
        self.initial_pose = pose;
        self
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn state(&self) -> Option<&TrackerState> {
        self.state.as_ref()
    }

    /// Processes the next frame and returns its world pose.
    pub fn process(&mut self, frame: Frame) -> Result<TrackResult> {
        match self.state.take() {
            None => {
                let diagnostics = FrameDiagnostics::first(frame.timestamp);
                self.state = Some(TrackerState::new(frame, &self.intrinsics, &self.config, self.initial_pose)?);
                Ok(TrackResult {
                    relative_pose: PoseSE3::identity(),
                    world_pose: self.initial_pose,
                    warp: PoseSE3::identity(),
                    initial_warp: PoseSE3::identity(),
                    diagnostics,
                    became_keyframe: true,
                })
            }
            Some(state) => {
                let backup = state.clone();
                match track_frame(state, frame, &self.intrinsics, &self.config) {
                    Ok((result, next)) => {
                        self.state = Some(next);
                        Ok(result)
                    }
                    Err(e) => {
                        self.state = Some(backup);
                        Err(e)
                    }
                }
            }
        }
    }
}

/// Estimated trajectory and per-frame diagnostics of a whole sequence.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<FrameDiagnostics>,
}

impl SequenceRun {
    pub fn tracked_frames(&self) -> usize {
        self.diagnostics.iter().skip(1).filter(|d| !d.lost).count()
    }

    pub fn lost_frames(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.lost).count()
    }

    /// Mean over tracked frames (the first frame is not tracked).
    pub fn mean_latency_ms(&self) -> f64 {
        mean(self.diagnostics.iter().skip(1).map(|d| d.latency_ms))
    }

    pub fn mean_pixels(&self) -> f64 {
        mean(self.diagnostics.iter().skip(1).map(|d| d.pixels as f64))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Tracks every frame of `source` in order.
pub fn run_sequence(source: &dyn FrameSource, cfg: &TrackerConfig) -> Result<SequenceRun> {
    let mut tracker = Tracker::new(source.intrinsics(), *cfg)?;
    let mut trajectory = Trajectory::default();
    let mut diagnostics = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let frame = source.frame(i)?;
        let timestamp = frame.timestamp;
        let result = tracker.process(frame)?;
        trajectory.push(timestamp, result.world_pose)?;
        diagnostics.push(result.diagnostics);
    }
    Ok(SequenceRun {
        trajectory,
        diagnostics,
    })
}
