//! Rigid-body motion and the pinhole camera model.
//!
//! Poses are stored as a rotation matrix plus translation. A [`Twist`] is
//! the 6-vector tangent parameterization used by the optimizer; the
//! translational part comes first, matching the column order of the
//! tracker's Jacobian.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle `exp_se3` switches to a second-order series.
const SMALL_ANGLE: f64 = 1e-8;

/// Deepest pyramid level supported (three levels in total).
pub const MAX_LEVEL: usize = 2;

/// se(3) element: translational part `v` (meters) and rotational part `w`
/// (axis times angle, radians).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds a twist from `[vx, vy, vz, wx, wy, wz]`.
    pub fn from_vector(xi: &Vector6<f64>) -> Self {
        Self {
            v: Vector3::new(xi[0], xi[1], xi[2]),
            w: Vector3::new(xi[3], xi[4], xi[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }
}

/// Rigid transform `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 (tolerance 1e-6).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !pose.is_valid(1e-6) {
            return Err(Error::InvalidArgument(
                "rotation matrix is not orthonormal with det = +1".into(),
            ));
        }
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from a (not necessarily unit) quaternion `(qx, qy, qz, qw)`.
    pub fn from_quaternion(translation: Vector3<f64>, q: [f64; 4]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidArgument("zero-norm quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self {
            rotation: *unit.to_rotation_matrix().matrix(),
            translation,
        })
    }

    /// Unit quaternion `(qx, qy, qz, qw)` with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot).into_inner();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let cos = 0.5 * (self.rotation.trace() - 1.0);
        let sin = 0.5 * vee(&(self.rotation - self.rotation.transpose())).norm();
        sin.atan2(cos)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        ortho <= tol
            && (r.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|c| c.is_finite())
    }

    /// Projects the rotation back onto SO(3) (nearest rotation via SVD).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        d[(2, 2)] = (u * vt).determinant().signum();
        Self {
            rotation: u * d * vt,
            translation: self.translation,
        }
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        &self * &rhs
    }
}

impl<'a> Mul<&'a PoseSE3> for &'a PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

/// Skew-symmetric matrix `[w]×` such that `[w]× x = w × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] applied to `M - Mᵀ`-style matrices (reads the lower triangle).
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Exponential map se(3) → SE(3) (closed-form Rodrigues).
pub fn exp_se3(xi: &Twist) -> PoseSE3 {
    let theta = xi.w.norm();
    let w_hat = hat(&xi.w);
    let w_hat2 = w_hat * w_hat;
    let (rotation, v_mat) = if theta < SMALL_ANGLE {
        (
            Matrix3::identity() + w_hat + 0.5 * w_hat2,
            Matrix3::identity() + 0.5 * w_hat + w_hat2 / 6.0,
        )
    } else {
        let theta2 = theta * theta;
        let (s, c) = theta.sin_cos();
        let a = s / theta;
        let b = (1.0 - c) / theta2;
        let cc = (theta - s) / (theta2 * theta);
        (
            Matrix3::identity() + a * w_hat + b * w_hat2,
            Matrix3::identity() + b * w_hat + cc * w_hat2,
        )
    };
    PoseSE3 {
        rotation,
        translation: v_mat * xi.v,
    }
}

/// Logarithm SE(3) → se(3).
///
/// At a rotation angle of exactly π the axis sign is ambiguous; the axis is
/// then taken from the largest diagonal entry of `R + I`.
pub fn log_se3(pose: &PoseSE3) -> Twist {
    let r = &pose.rotation;
    let cos = (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0);
    let skew = vee(&(r - r.transpose()));
    let sin = 0.5 * skew.norm();
    let theta = sin.atan2(cos);

    let w = if theta < 1e-10 {
        0.5 * skew
    } else if PI - theta < 1e-5 {
        theta * axis_near_pi(r, &skew)
    } else {
        (theta / (2.0 * theta.sin())) * skew
    };

    let w_hat = hat(&w);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - c))) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - 0.5 * w_hat + coeff * w_hat * w_hat;
    Twist {
        v: v_inv * pose.translation,
        w,
    }
}

fn axis_near_pi(r: &Matrix3<f64>, skew: &Vector3<f64>) -> Vector3<f64> {
    // R + I = 2 a aᵀ + O(π - θ) near θ = π.
    let sym = 0.5 * (r + Matrix3::identity());
    let mut k = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(k, k)] {
            k = i;
        }
    }
    let mut axis = sym.column(k).into_owned() / sym[(k, k)].max(1e-300).sqrt();
    axis.normalize_mut();
    if axis.dot(skew) < 0.0 {
        axis = -axis;
    }
    axis
}

/// `exp(update) · base`.
pub fn compose(update: &Twist, base: &PoseSE3) -> PoseSE3 {
    &exp_se3(update) * base
}

/// Pinhole intrinsics plus image size; pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Default Kinect/Xtion intrinsics shipped with the TUM benchmark tools.
    pub fn tum_default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }

    /// Calibrated intrinsics of the TUM "freiburg1" sensor.
    pub fn tum_freiburg1() -> Self {
        Self {
            fx: 517.3,
            fy: 516.5,
            cx: 318.6,
            cy: 255.3,
            width: 640,
            height: 480,
        }
    }

    /// Calibrated intrinsics of the TUM "freiburg2" sensor.
    pub fn tum_freiburg2() -> Self {
        Self {
            fx: 520.9,
            fy: 521.0,
            cx: 325.1,
            cy: 249.7,
            width: 640,
            height: 480,
        }
    }

    /// Calibrated intrinsics of the TUM "freiburg3" sensor.
    pub fn tum_freiburg3() -> Self {
        Self {
            fx: 535.4,
            fy: 539.2,
            cx: 320.1,
            cy: 247.6,
            width: 640,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid intrinsics: {self:?}"
            )))
        }
    }

    /// Maps a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(self.project_unchecked(p))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let iz = 1.0 / p.z;
        Vector2::new(self.fx * p.x * iz + self.cx, self.fy * p.y * iz + self.cy)
    }

    /// Lifts a pixel with metric depth `z` to a camera-frame point.
    pub fn backproject(&self, x: &Vector2<f64>, z: f64) -> Result<Vector3<f64>> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InvalidDepth(z));
        }
        Ok(self.backproject_unchecked(x.x, x.y, z))
    }

    #[inline]
    pub(crate) fn backproject_unchecked(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Intrinsics of pyramid level `level` (each level halves the resolution).
    pub fn scale(&self, level: usize) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::LevelTooDeep(level));
        }
        let s = (1u32 << level) as f64;
        Ok(Self {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width >> level,
            height: self.height >> level,
        })
    }
}

/// Free-function form of [`CameraIntrinsics::project`].
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    k.project(p)
}

/// Free-function form of [`CameraIntrinsics::backproject`].
pub fn backproject(x: &Vector2<f64>, z: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    k.backproject(x, z)
}

/// Free-function form of [`CameraIntrinsics::scale`].
pub fn scale_intrinsics(k: &CameraIntrinsics, level: usize) -> Result<CameraIntrinsics> {
    k.scale(level)
}
