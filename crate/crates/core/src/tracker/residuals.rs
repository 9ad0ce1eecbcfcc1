//! Photometric residuals over masked reference pixels, robust weights and
//! the weighted normal equations of one Gauss-Newton step.

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};

use crate::edges::EdgeMask;
use crate::error::{Error, Result};
use crate::geometry::{exp_se3, CameraIntrinsics, PoseSE3, Twist};
use crate::imaging::{DepthImage, GrayImage, PyramidLevel};

/// Consistency constant turning a MAD into a Gaussian standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Lower bound of the Huber threshold, in intensity units.
pub const MIN_HUBER_THRESHOLD: f64 = 1e-4;

/// Which image derivative feeds the Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientSource {
    /// Central-difference gradient image, bilinearly interpolated at the
    /// warped pixel. Its noise is uncorrelated with the interpolated
    /// intensity, so image noise does not bias the solution.
    #[default]
    CentralDifference,
    /// Exact derivative of the bilinear interpolant of the new image at the
    /// warped pixel; the Jacobian is then the true derivative of the residual.
    Interpolant,
}

/// A reference pixel lifted to 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub intensity: f64,
}

/// Residual support: reference pixels selected by the new image's edge mask.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferencePointSet {
    pub points: Vec<ReferencePoint>,
}

impl ReferencePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lifts the given reference pixels; pixels without valid depth are skipped.
    pub fn from_pixels(
        gray: &GrayImage,
        depth: &DepthImage,
        intrinsics: &CameraIntrinsics,
        pixels: impl IntoIterator<Item = (usize, usize)>,
        min_valid_points: usize,
    ) -> Result<Self> {
        if gray.dims() != depth.dims() {
            return Err(Error::DimensionMismatch {
                expected: gray.dims(),
                actual: depth.dims(),
            });
        }
        let points: Vec<ReferencePoint> = pixels
            .into_iter()
            .filter_map(|(x, y)| {
                let z = depth.get(x, y);
                (z > 0.0).then(|| ReferencePoint {
                    pixel: Vector2::new(x as f64, y as f64),
                    point: intrinsics.backproject_unchecked(x as f64, y as f64, z),
                    intensity: gray.get(x, y),
                })
            })
            .collect();
        if points.len() < min_valid_points.max(1) {
            return Err(Error::InsufficientPoints {
                found: points.len(),
                required: min_valid_points.max(1),
            });
        }
        Ok(Self { points })
    }

    /// Duplicates every point (used to check that sums scale linearly).
    pub fn doubled(&self) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&self.points);
        Self { points }
    }
}

/// Backprojects every masked reference pixel that has a valid depth.
pub fn build_reference_points(
    gray: &GrayImage,
    depth: &DepthImage,
    mask: &EdgeMask,
    intrinsics: &CameraIntrinsics,
    min_valid_points: usize,
) -> Result<ReferencePointSet> {
    if mask.dims() != gray.dims() {
        return Err(Error::DimensionMismatch {
            expected: gray.dims(),
            actual: mask.dims(),
        });
    }
    ReferencePointSet::from_pixels(gray, depth, intrinsics, mask.iter(), min_valid_points)
}

/// Outcome of warping one reference point into the new image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedResidual {
    /// `I₂(warped) − I₁(x)`.
    pub residual: f64,
    pub pixel: Vector2<f64>,
    /// Reference point expressed in the new camera frame.
    pub point: Vector3<f64>,
}

#[inline]
fn warp_one(p: &ReferencePoint, warp: &PoseSE3, level: &PyramidLevel) -> Option<(WarpedResidual, f64, f64)> {
    let q = warp.transform_point(&p.point);
    if !(q.z > 0.0) {
        return None;
    }
    let px = level.intrinsics.project_unchecked(&q);
    let (value, gx, gy) = level.gray.sample_with_gradient(px.x, px.y)?;
    Some((
        WarpedResidual {
            residual: value - p.intensity,
            pixel: px,
            point: q,
        },
        gx,
        gy,
    ))
}

/// Residuals of every point under `warp` (reference → new camera); `None`
/// marks points behind the camera or outside the new image.
pub fn evaluate_residuals_at(
    points: &ReferencePointSet,
    level: &PyramidLevel,
    warp: &PoseSE3,
    min_valid_points: usize,
) -> Result<Vec<Option<WarpedResidual>>> {
    let out: Vec<Option<WarpedResidual>> = points
        .points
        .iter()
        .map(|p| warp_one(p, warp, level).map(|(r, _, _)| r))
        .collect();
    let valid = out.iter().filter(|r| r.is_some()).count();
    if valid < min_valid_points.max(1) {
        return Err(Error::InsufficientOverlap {
            found: valid,
            required: min_valid_points.max(1),
        });
    }
    Ok(out)
}

/// [`evaluate_residuals_at`] with the warp given as a twist.
pub fn evaluate_residuals(
    points: &ReferencePointSet,
    level: &PyramidLevel,
    xi: &Twist,
    min_valid_points: usize,
) -> Result<Vec<Option<WarpedResidual>>> {
    evaluate_residuals_at(points, level, &exp_se3(xi), min_valid_points)
}

/// Huber IRLS weight: 1 inside `k`, `k/|r|` outside.
#[inline]
pub fn huber_weight(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        1.0
    } else {
        k / a
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Huber threshold `tuning · 1.4826 · MAD(r)`, floored at [`MIN_HUBER_THRESHOLD`].
pub fn robust_scale(residuals: &[f64], tuning: f64) -> Result<f64> {
    if residuals.len() < 2 {
        return Err(Error::InsufficientOverlap {
            found: residuals.len(),
            required: 2,
        });
    }
    let mut buf = residuals.to_vec();
    let med = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - med).abs();
    }
    let mad = median_in_place(&mut buf);
    Ok((tuning * MAD_TO_SIGMA * mad).max(MIN_HUBER_THRESHOLD))
}

/// Residuals and Jacobian rows of every valid point at one linearization point.
#[derive(Debug, Clone, Default)]
pub struct Linearization {
    pub residuals: Vec<f64>,
    pub jacobians: Vec<[f64; 6]>,
}

impl Linearization {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    /// `Σ w(r; k) r²`.
    pub fn weighted_error(&self, k: f64) -> f64 {
        self.residuals.iter().map(|r| huber_weight(*r, k) * r * r).sum()
    }
}

/// Jacobian row of one residual with respect to a left-multiplied twist
/// `exp(δ)·T`, given the image gradient at the warped pixel.
#[inline]
pub fn jacobian_row(point: &Vector3<f64>, gx: f64, gy: f64, k: &CameraIntrinsics) -> [f64; 6] {
    let iz = 1.0 / point.z;
    let a = gx * k.fx * iz;
    let b = gy * k.fy * iz;
    let c = -(a * point.x + b * point.y) * iz;
    // Rotational block: P' × (a, b, c).
    [
        a,
        b,
        c,
        point.y * c - point.z * b,
        point.z * a - point.x * c,
        point.x * b - point.y * a,
    ]
}

/// Evaluates residuals and Jacobian rows of all valid points.
pub fn linearize(
    points: &ReferencePointSet,
    level: &PyramidLevel,
    warp: &PoseSE3,
    gradient: GradientSource,
    min_valid_points: usize,
) -> Result<Linearization> {
    let mut lin = Linearization {
        residuals: Vec::with_capacity(points.len()),
        jacobians: Vec::with_capacity(points.len()),
    };
    for p in &points.points {
        let Some((w, mut gx, mut gy)) = warp_one(p, warp, level) else {
            continue;
        };
        if gradient == GradientSource::CentralDifference {
            (gx, gy) = level.grad.sample(w.pixel.x, w.pixel.y).unwrap_or((0.0, 0.0));
        }
        lin.residuals.push(w.residual);
        lin.jacobians.push(jacobian_row(&w.point, gx, gy, &level.intrinsics));
    }
    if lin.len() < min_valid_points.max(1) {
        return Err(Error::InsufficientOverlap {
            found: lin.len(),
            required: min_valid_points.max(1),
        });
    }
    Ok(lin)
}

/// Weighted normal equations `JᵀWJ δ = −JᵀWr`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub jtwj: Matrix6<f64>,
    pub jtwr: Vector6<f64>,
    /// `Σ w r²`.
    pub total_error: f64,
    /// Points with unit weight (`|r| ≤ k`).
    pub inlier_count: usize,
    pub valid_count: usize,
}

impl NormalEquations {
    /// Accumulates in point order so results are reproducible bit for bit.
    pub fn accumulate(lin: &Linearization, k: f64) -> Self {
        let mut h = [[0.0f64; 6]; 6];
        let mut g = [0.0f64; 6];
        let mut total_error = 0.0;
        let mut inlier_count = 0;
        for (r, j) in lin.residuals.iter().zip(&lin.jacobians) {
            let w = huber_weight(*r, k);
            if w == 1.0 {
                inlier_count += 1;
            }
            total_error += w * r * r;
            for a in 0..6 {
                let wja = w * j[a];
                g[a] += wja * r;
                for b in a..6 {
                    h[a][b] += wja * j[b];
                }
            }
        }
        let mut jtwj = Matrix6::zeros();
        for a in 0..6 {
            for b in a..6 {
                jtwj[(a, b)] = h[a][b];
                jtwj[(b, a)] = h[a][b];
            }
        }
        Self {
            jtwj,
            jtwr: Vector6::from_row_slice(&g),
            total_error,
            inlier_count,
            valid_count: lin.len(),
        }
    }

    /// Damped solve for the Gauss-Newton increment `−(JᵀWJ + λI)⁻¹ JᵀWr`
    /// with `λ = 1e-6 · trace / 6`.
    pub fn solve_step(&self) -> Result<Twist> {
        let lambda = 1e-6 * self.jtwj.trace() / 6.0;
        let mut damped = self.jtwj;
        for i in 0..6 {
            damped[(i, i)] += lambda;
        }
        let chol = damped.cholesky().ok_or(Error::DegenerateGeometry)?;
        let delta = -chol.solve(&self.jtwr);
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateGeometry);
        }
        Ok(Twist::from_vector(&delta))
    }
}

/// Normal equations of all points at `warp` with Huber threshold `k`.
pub fn assemble_normal_equations(
    points: &ReferencePointSet,
    level: &PyramidLevel,
    warp: &PoseSE3,
    k: f64,
    gradient: GradientSource,
    min_valid_points: usize,
) -> Result<NormalEquations> {
    let lin = linearize(points, level, warp, gradient, min_valid_points)?;
    Ok(NormalEquations::accumulate(&lin, k))
}

/// RMS photometric error over every reference pixel with valid depth, for
/// each of the given warps. Only pixels that stay inside the new image under
/// all warps are counted, so the values are directly comparable. Returns the
/// RMS values and the number of pixels used.
pub fn dense_photometric_rms(
    reference: &PyramidLevel,
    new: &PyramidLevel,
    warps: &[PoseSE3],
) -> (Vec<f64>, usize) {
    let (w, h) = reference.gray.dims();
    let mut sums = vec![0.0; warps.len()];
    let mut count = 0usize;
    let mut residuals = vec![0.0; warps.len()];
    for y in 0..h {
        for x in 0..w {
            let z = reference.depth.get(x, y);
            if z <= 0.0 {
                continue;
            }
            let p = ReferencePoint {
                pixel: Vector2::new(x as f64, y as f64),
                point: reference.intrinsics.backproject_unchecked(x as f64, y as f64, z),
                intensity: reference.gray.get(x, y),
            };
            let all_valid = warps.iter().zip(residuals.iter_mut()).all(|(t, slot)| {
                warp_one(&p, t, new).map(|(r, _, _)| *slot = r.residual).is_some()
            });
            if all_valid {
                count += 1;
                for (s, r) in sums.iter_mut().zip(&residuals) {
                    *s += r * r;
                }
            }
        }
    }
    let rms = sums
        .into_iter()
        .map(|s| if count == 0 { f64::NAN } else { (s / count as f64).sqrt() })
        .collect();
    (rms, count)
}
