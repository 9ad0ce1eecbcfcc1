//! Ray-cast RGB-D renderings of textured planes with exact ground truth.
//!
//! Textures are procedural functions of the *world* point, so intensity is
//! continuous across plane intersections and every rendered pixel is an
//! exact sample of a smooth field.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{format_camera_file, write_depth};
use crate::error::{Error, Result};
use crate::evaluation::{format_trajectory, Trajectory};
use crate::geometry::{exp_se3, CameraIntrinsics, PoseSE3, Twist};
use crate::imaging::{DepthImage, GrayImage};
use crate::sequence::InMemorySequence;
use crate::tracker::Frame;

/// Flat patches with soft boundaries, faint shading and a grid of lines.
///
/// Patch tones come from thresholding seeded value noise with two smooth
/// steps; lines are Gaussian profiles around the planes where a world
/// coordinate is a multiple of `line_spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProceduralTexture {
    pub seed: u64,
    /// Lattice spacing of the patch noise, meters.
    pub patch_cell: f64,
    /// Width of the patch boundaries, in noise units.
    pub patch_softness: f64,
    pub line_spacing: f64,
    /// Standard deviation of the Gaussian line profile, meters.
    pub line_width: f64,
    pub base: f64,
    pub patch_amplitude: f64,
    pub shading_amplitude: f64,
    pub line_amplitude: f64,
}

impl ProceduralTexture {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            patch_cell: 0.8,
            patch_softness: 0.06,
            line_spacing: 0.6,
            line_width: 0.05,
            base: 0.15,
            patch_amplitude: 0.35,
            shading_amplitude: 0.0,
            line_amplitude: 0.35,
        }
    }

    /// Intensity at world point `p`, in [0, 1].
    pub fn value(&self, p: &Vector3<f64>) -> f64 {
        let n = self.noise(&(p / self.patch_cell));
        let step = |c: f64| 1.0 / (1.0 + (-(n - c) / self.patch_softness).exp());
        let patches = 0.5 * (step(0.38) + step(0.62));
        let shading = self.noise(&(p / self.patch_cell * 0.5 + Vector3::repeat(17.0)));
        let v = self.base
            + self.patch_amplitude * patches
            + self.shading_amplitude * shading
            + self.line_amplitude * self.lines(p);
        v.clamp(0.0, 1.0)
    }

    fn lattice(&self, x: i64, y: i64, z: i64) -> f64 {
        let mut h = self.seed ^ 0x51_7CC1_B727_220A;
        for c in [x, y, z] {
            h = splitmix(h ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Trilinear value noise with quintic fade on the unit lattice, in [0, 1].
    fn noise(&self, q: &Vector3<f64>) -> f64 {
        let base = q.map(f64::floor);
        let f = (q - base).map(fade);
        let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { f.x } else { 1.0 - f.x })
                        * (if dy == 1 { f.y } else { 1.0 - f.y })
                        * (if dz == 1 { f.z } else { 1.0 - f.z });
                    acc += w * self.lattice(ix + dx, iy + dy, iz + dz);
                }
            }
        }
        acc
    }

    /// Union of the three axis-aligned families of line slabs, in [0, 1].
    fn lines(&self, p: &Vector3<f64>) -> f64 {
        let mut none = 1.0;
        for c in p.iter() {
            let d = c - self.line_spacing * (c / self.line_spacing).round();
            none *= 1.0 - (-0.5 * (d / self.line_width).powi(2)).exp();
        }
        1.0 - none
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A rectangle lying in the local `z = 0` plane of `pose` (local → world).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub pose: PoseSE3,
    /// Half extents along the local x and y axes, meters.
    pub half_extent: (f64, f64),
    pub texture: ProceduralTexture,
}

impl Plane {
    pub fn normal(&self) -> Vector3<f64> {
        self.pose.rotation.column(2).into_owned()
    }

    /// Ray parameter of the intersection with `origin + s·dir`, if it lies
    /// in front of the origin and inside the rectangle.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let n = self.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = n.dot(&(self.pose.translation - origin)) / denom;
        if !(s > 1e-9) {
            return None;
        }
        let local = self.pose.inverse().transform_point(&(origin + s * dir));
        (local.x.abs() <= self.half_extent.0 && local.y.abs() <= self.half_extent.1).then_some(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub planes: Vec<Plane>,
    pub intrinsics: CameraIntrinsics,
}

/// What a single camera ray sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Depth along the camera's optical axis.
    pub depth: f64,
    pub world_point: Vector3<f64>,
    pub intensity: f64,
    pub plane: usize,
}

impl SyntheticScene {
    /// Nearest surface seen through pixel `(u, v)` from a camera at
    /// `camera_pose` (camera → world).
    pub fn ray_cast(&self, camera_pose: &PoseSE3, u: f64, v: f64) -> Option<RayHit> {
        let k = &self.intrinsics;
        // Unit depth along the optical axis, so the ray parameter is the depth.
        let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = camera_pose.rotation * dir_cam;
        let origin = camera_pose.translation;
        let (plane, s) = self
            .planes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(&origin, &dir).map(|s| (i, s)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let world_point = origin + s * dir;
        Some(RayHit {
            depth: s,
            world_point,
            intensity: self.planes[plane].texture.value(&world_point),
            plane,
        })
    }

    /// Renders the view from `camera_pose`; pixels without geometry get
    /// invalid depth and zero intensity.
    pub fn render(&self, camera_pose: &PoseSE3) -> Result<Frame> {
        self.render_at(0.0, camera_pose)
    }

    pub fn render_at(&self, timestamp: f64, camera_pose: &PoseSE3) -> Result<Frame> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let mut gray = vec![0.0; w * h];
        let mut depth = vec![0.0; w * h];
        let mut hits = 0usize;
        for y in 0..h {
            for x in 0..w {
                if let Some(hit) = self.ray_cast(camera_pose, x as f64, y as f64) {
                    gray[y * w + x] = hit.intensity;
                    depth[y * w + x] = hit.depth;
                    hits += 1;
                }
            }
        }
        if hits == 0 {
            return Err(Error::NothingVisible);
        }
        Frame::new(timestamp, GrayImage::new(w, h, gray)?, DepthImage::new(w, h, depth)?)
    }
}

/// Intrinsics of the benchmark renders (half-resolution Kinect).
pub fn benchmark_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 262.5,
        fy: 262.5,
        cx: 159.5,
        cy: 119.5,
        width: 320,
        height: 240,
    }
}

/// A textured wall about 2.5 m ahead, slanted about both image axes so
/// depth varies across the view; fills the whole view from poses near the
/// origin.
pub fn benchmark_scene(seed: u64) -> SyntheticScene {
    let rot = Rotation3::from_euler_angles(10f64.to_radians(), 25f64.to_radians(), 0.0);
    let wall = Plane {
        pose: PoseSE3 {
            rotation: *rot.matrix(),
            translation: Vector3::new(0.0, 0.0, 2.5),
        },
        half_extent: (10.0, 10.0),
        texture: ProceduralTexture::new(seed),
    };
    SyntheticScene {
        planes: vec![wall],
        intrinsics: benchmark_intrinsics(),
    }
}

/// A single fronto-parallel plane at `distance` meters.
pub fn fronto_parallel_scene(distance: f64, intrinsics: CameraIntrinsics, seed: u64) -> SyntheticScene {
    SyntheticScene {
        planes: vec![Plane {
            pose: PoseSE3::from_translation(Vector3::new(0.0, 0.0, distance)),
            half_extent: (50.0, 50.0),
            texture: ProceduralTexture::new(seed),
        }],
        intrinsics,
    }
}

/// `frames` camera poses moving with a constant body-frame twist per frame.
pub fn constant_velocity_trajectory(
    start: &PoseSE3,
    per_frame: &Twist,
    frames: usize,
    fps: f64,
    t0: f64,
) -> Result<Trajectory> {
    let step = exp_se3(per_frame);
    let mut pose = *start;
    let mut entries = Vec::with_capacity(frames);
    for i in 0..frames {
        entries.push((t0 + i as f64 / fps, pose));
        pose = &pose * &step;
    }
    Trajectory::new(entries)
}

/// Frame rate of generated sequences.
pub const SYNTHETIC_FPS: f64 = 30.0;

/// First timestamp of generated sequences.
pub const SYNTHETIC_T0: f64 = 1000.0;

/// Per-frame twist for a given speed: translation of `velocity` m/s along
/// a fixed oblique direction with a slow 3°/s turn.
pub fn benchmark_motion(velocity: f64) -> Twist {
    let dir = Vector3::new(0.6, -0.15, 0.78).normalize();
    let axis = Vector3::new(0.2, 1.0, 0.1).normalize();
    Twist::new(
        dir * velocity / SYNTHETIC_FPS,
        axis * 3f64.to_radians() / SYNTHETIC_FPS,
    )
}

pub fn benchmark_trajectory(frames: usize, velocity: f64) -> Result<Trajectory> {
    constant_velocity_trajectory(
        &PoseSE3::identity(),
        &benchmark_motion(velocity),
        frames,
        SYNTHETIC_FPS,
        SYNTHETIC_T0,
    )
}

/// Renders every pose of `trajectory`, adding seeded Gaussian intensity
/// noise (clamped to [0, 1]) when `noise_sigma > 0`.
pub fn generate_sequence(
    scene: &SyntheticScene,
    trajectory: &Trajectory,
    noise_sigma: f64,
    seed: u64,
) -> Result<InMemorySequence> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut frames = Vec::with_capacity(trajectory.len());
    for (t, pose) in trajectory.entries() {
        let mut frame = scene.render_at(*t, pose)?;
        if noise_sigma > 0.0 {
            let (w, h) = frame.dims();
            let clean = frame.gray;
            frame.gray = GrayImage::from_fn(w, h, |x, y| clean.get(x, y) + normal.sample(&mut rng));
        }
        frames.push(frame);
    }
    InMemorySequence::new(scene.intrinsics, frames, Some(trajectory.clone()))
}

/// The benchmark scene and trajectory rendered in one call.
pub fn benchmark_sequence(frames: usize, velocity: f64, noise_sigma: f64, seed: u64) -> Result<InMemorySequence> {
    generate_sequence(&benchmark_scene(seed), &benchmark_trajectory(frames, velocity)?, noise_sigma, seed)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a sequence as a TUM-format directory: 8-bit RGB and 16-bit depth
/// PNGs, `rgb.txt`, `depth.txt`, `groundtruth.txt` and `camera.txt`.
pub fn write_tum_sequence(sequence: &InMemorySequence, dir: &Path) -> Result<()> {
    for sub in ["rgb", "depth"] {
        let path = dir.join(sub);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    let mut rgb_list = String::from("# color images\n# timestamp filename\n");
    let mut depth_list = String::from("# depth maps\n# timestamp filename\n");
    for frame in &sequence.frames {
        let name = format!("{:.6}.png", frame.timestamp);
        let (w, h) = frame.dims();
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let v = (frame.gray.get(x as usize, y as usize) * 255.0).round() as u8;
            Rgb([v, v, v])
        });
        let rgb_path = dir.join("rgb").join(&name);
        rgb.save(&rgb_path).map_err(|source| Error::Codec {
            path: rgb_path.clone(),
            source,
        })?;
        write_depth(&frame.depth, &dir.join("depth").join(&name))?;
        rgb_list.push_str(&format!("{:.6} rgb/{name}\n", frame.timestamp));
        depth_list.push_str(&format!("{:.6} depth/{name}\n", frame.timestamp));
    }
    write_text(&dir.join("rgb.txt"), &rgb_list)?;
    write_text(&dir.join("depth.txt"), &depth_list)?;
    if let Some(gt) = &sequence.groundtruth {
        let text = format!("# ground truth trajectory\n# timestamp tx ty tz qx qy qz qw\n{}", format_trajectory(gt));
        write_text(&dir.join("groundtruth.txt"), &text)?;
    }
    write_text(&dir.join("camera.txt"), &format_camera_file(&sequence.intrinsics))
}
