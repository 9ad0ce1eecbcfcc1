#![allow(dead_code)]

use edvo::evaluation::Trajectory;
use edvo::geometry::{exp_se3, PoseSE3, Twist};
use edvo::imaging::{build_pyramid, PyramidLevel};
use edvo::synthetic::{benchmark_scene, generate_sequence};
use edvo::tracker::{track_frame, Frame, TrackResult, TrackerConfig, TrackerState};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Twist with translation `t_norm` meters and rotation `deg` degrees about
/// random directions.
pub fn random_motion(rng: &mut ChaCha8Rng, t_norm: f64, deg: f64) -> Twist {
    let mut dir = || {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() < 1e-3 {
            Vector3::x()
        } else {
            v.normalize()
        }
    };
    let t = dir() * t_norm;
    let w = dir() * deg.to_radians();
    // exp_se3 couples v and w; scale the translation part so ‖t‖ is exact.
    let pose = exp_se3(&Twist::new(t, w));
    let s = t_norm / pose.translation.norm();
    Twist::new(t * s, w)
}

/// Renders the benchmark scene at identity and at `exp(motion)`.
pub struct Pair {
    pub reference: Frame,
    pub new: Frame,
    /// Pose of the new camera in the reference camera frame.
    pub motion: PoseSE3,
}

impl Pair {
    pub fn render(scene_seed: u64, motion: &Twist, noise: f64, noise_seed: u64) -> Self {
        let scene = benchmark_scene(scene_seed);
        let b = exp_se3(motion);
        let traj = Trajectory::new(vec![(0.0, PoseSE3::identity()), (1.0 / 30.0, b)]).unwrap();
        let seq = generate_sequence(&scene, &traj, noise, noise_seed).unwrap();
        let mut frames = seq.frames.into_iter();
        Self {
            reference: frames.next().unwrap(),
            new: frames.next().unwrap(),
            motion: b,
        }
    }

    /// Ground-truth warp (reference camera → new camera).
    pub fn warp(&self) -> PoseSE3 {
        self.motion.inverse()
    }

    pub fn levels(&self, n: usize) -> (Vec<PyramidLevel>, Vec<PyramidLevel>) {
        let k = edvo::synthetic::benchmark_intrinsics();
        (
            build_pyramid(&self.reference.gray, &self.reference.depth, &k, n).unwrap(),
            build_pyramid(&self.new.gray, &self.new.depth, &k, n).unwrap(),
        )
    }

    /// Tracks the new frame against the reference from a zero initial guess.
    pub fn track(&self, cfg: &TrackerConfig) -> TrackResult {
        let k = edvo::synthetic::benchmark_intrinsics();
        let cfg = TrackerConfig {
            use_motion_prior: false,
            ..*cfg
        };
        let state = TrackerState::new(self.reference.clone(), &k, &cfg, PoseSE3::identity()).unwrap();
        track_frame(state, self.new.clone(), &k, &cfg).unwrap().0
    }

    /// (translation error m, rotation error deg) of an estimated relative pose.
    pub fn error(&self, estimate: &PoseSE3) -> (f64, f64) {
        let e = &estimate.inverse() * &self.motion;
        (e.translation.norm(), e.rotation_angle().to_degrees())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
