//! Trajectory metrics: relative pose error, absolute trajectory error, and
//! the TUM trajectory text format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::dataset::associate_timestamps;
use crate::error::{Error, Result};
use crate::geometry::PoseSE3;

/// Timestamped world-frame poses with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, PoseSE3)>) -> Result<Self> {
        let mut traj = Self::default();
        for (t, pose) in entries {
            traj.push(t, pose)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, timestamp: f64, pose: PoseSE3) -> Result<()> {
        if !timestamp.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite timestamp {timestamp}")));
        }
        if let Some(&(last, _)) = self.entries.last() {
            if !(timestamp > last) {
                return Err(Error::InvalidArgument(format!(
                    "timestamp {timestamp} does not increase past {last}"
                )));
            }
        }
        if !pose.is_valid(1e-6) {
            return Err(Error::InvalidArgument(format!("invalid pose at t = {timestamp}")));
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, PoseSE3)] {
        &self.entries
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn poses(&self) -> impl Iterator<Item = &PoseSE3> {
        self.entries.iter().map(|e| &e.1)
    }

    /// Entries with `first <= t <= last`.
    pub fn between(&self, first: f64, last: f64) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.0 >= first && e.0 <= last).copied().collect(),
        }
    }

    /// Every pose left-multiplied by `transform`.
    pub fn transformed(&self, transform: &PoseSE3) -> Self {
        Self {
            entries: self.entries.iter().map(|(t, p)| (*t, transform * p)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// RPE interval in seconds.
    pub delta_t: f64,
    /// Maximum timestamp difference when pairing samples.
    pub tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            delta_t: 1.0,
            tolerance: 0.02,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("delta_t and tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// One evaluated sample: translational error (m, or m/s for RPE) and
/// rotational error (rad, or rad/s for RPE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub timestamp: f64,
    pub translation: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    /// RMSE of the translational errors.
    pub rmse: f64,
    pub rotation_rmse: f64,
    pub samples: Vec<ErrorSample>,
}

impl MetricResult {
    fn from_samples(samples: Vec<ErrorSample>) -> Self {
        Self {
            rmse: rms(samples.iter().map(|s| s.translation)),
            rotation_rmse: rms(samples.iter().map(|s| s.rotation)),
            samples,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.translation).sum::<f64>() / self.samples.len() as f64
    }

    /// Per-sample errors as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,translation_error,rotation_error\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:.6},{:.9},{:.9}", s.timestamp, s.translation, s.rotation);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Pairs of (ground truth, estimate) poses with matched timestamps, in
/// ground-truth time order.
fn associated_poses(gt: &Trajectory, est: &Trajectory, tolerance: f64) -> Result<Vec<(f64, PoseSE3, PoseSE3)>> {
    let pairs = associate_timestamps(&gt.timestamps(), &est.timestamps(), tolerance);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(pairs
        .into_iter()
        .map(|(i, j)| (gt.entries[i].0, gt.entries[i].1, est.entries[j].1))
        .collect())
}

/// Translational relative pose error over intervals of `cfg.delta_t`.
///
/// For each associated time `t` with an associated sample near `t + Δt`,
/// the error pose is `(Q_t⁻¹ Q_{t+Δt})⁻¹ (P_t⁻¹ P_{t+Δt})`; its translation
/// norm divided by Δt is the per-pair error.
pub fn rpe(gt: &Trajectory, est: &Trajectory, cfg: &EvalConfig) -> Result<MetricResult> {
    cfg.validate()?;
    let assoc = associated_poses(gt, est, cfg.tolerance)?;
    if assoc.len() < 2 {
        return Err(Error::TooFewPairs(assoc.len()));
    }
    let times: Vec<f64> = assoc.iter().map(|a| a.0).collect();
    let mut samples = Vec::new();
    for (i, &(t, q0, p0)) in assoc.iter().enumerate() {
        let target = t + cfg.delta_t;
        let Some(j) = nearest_index(&times, target) else {
            continue;
        };
        if j <= i || (times[j] - target).abs() > cfg.tolerance {
            continue;
        }
        let (_, q1, p1) = assoc[j];
        let gt_rel = &q0.inverse() * &q1;
        let est_rel = &p0.inverse() * &p1;
        let err = &gt_rel.inverse() * &est_rel;
        samples.push(ErrorSample {
            timestamp: t,
            translation: err.translation.norm() / cfg.delta_t,
            rotation: err.rotation_angle() / cfg.delta_t,
        });
    }
    if samples.is_empty() {
        return Err(Error::TooFewPairs(0));
    }
    Ok(MetricResult::from_samples(samples))
}

fn nearest_index(sorted: &[f64], target: f64) -> Option<usize> {
    let pos = sorted.partition_point(|&t| t < target);
    let candidates = [pos.checked_sub(1), (pos < sorted.len()).then_some(pos)];
    candidates
        .into_iter()
        .flatten()
        .min_by(|&a, &b| (sorted[a] - target).abs().total_cmp(&(sorted[b] - target).abs()))
}

/// Rigid transform `S` minimizing `Σ‖gt_i − S·est_i‖²`.
pub fn umeyama_align(gt: &[Vector3<f64>], est: &[Vector3<f64>]) -> Result<PoseSE3> {
    if gt.len() != est.len() {
        return Err(Error::InvalidArgument(format!(
            "point count mismatch: {} vs {}",
            gt.len(),
            est.len()
        )));
    }
    if gt.len() < 3 {
        return Err(Error::DegenerateAlignment);
    }
    let n = gt.len() as f64;
    let mean_gt = gt.iter().sum::<Vector3<f64>>() / n;
    let mean_est = est.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter_gt = Matrix3::zeros();
    let mut scatter_est = Matrix3::zeros();
    for (q, p) in gt.iter().zip(est) {
        let (dq, dp) = (q - mean_gt, p - mean_est);
        cov += dq * dp.transpose();
        scatter_gt += dq * dq.transpose();
        scatter_est += dp * dp.transpose();
    }
    if is_collinear(&scatter_gt) || is_collinear(&scatter_est) {
        return Err(Error::DegenerateAlignment);
    }
    let svd = cov.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::DegenerateAlignment),
    };
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        // Flip the direction belonging to the smallest singular value.
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(2);
        d[(smallest, smallest)] = -1.0;
    }
    let rotation = u * d * vt;
    let translation = mean_gt - rotation * mean_est;
    Ok(PoseSE3 { rotation, translation }.orthonormalized())
}

fn is_collinear(scatter: &Matrix3<f64>) -> bool {
    let mut eig: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig[0] <= 1e-18 || eig[1] <= 1e-10 * eig[0]
}

/// Absolute trajectory error after rigid alignment of the positions.
pub fn ate(gt: &Trajectory, est: &Trajectory, cfg: &EvalConfig) -> Result<MetricResult> {
    cfg.validate()?;
    let (result, _) = ate_with_alignment(gt, est, cfg)?;
    Ok(result)
}

/// [`ate`] together with the alignment transform applied to the estimate.
pub fn ate_with_alignment(gt: &Trajectory, est: &Trajectory, cfg: &EvalConfig) -> Result<(MetricResult, PoseSE3)> {
    let assoc = associated_poses(gt, est, cfg.tolerance)?;
    let gt_pos: Vec<Vector3<f64>> = assoc.iter().map(|a| a.1.translation).collect();
    let est_pos: Vec<Vector3<f64>> = assoc.iter().map(|a| a.2.translation).collect();
    let s = umeyama_align(&gt_pos, &est_pos)?;
    let samples = assoc
        .iter()
        .map(|(t, q, p)| {
            let aligned = &s * p;
            ErrorSample {
                timestamp: *t,
                translation: (q.translation - aligned.translation).norm(),
                rotation: (&q.inverse() * &aligned).rotation_angle(),
            }
        })
        .collect();
    Ok((MetricResult::from_samples(samples), s))
}

/// `%.9g`-style formatting with trailing zeros removed.
fn format_significant(value: f64) -> String {
    const DIGITS: i32 = 9;
    if value == 0.0 || !value.is_finite() {
        return if value.is_finite() { "0".into() } else { value.to_string() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, value);
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if exp < -4 || exp >= DIGITS {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let fixed = format!("{:.*}", (DIGITS - 1 - exp) as usize, value);
        trim_zeros(&fixed).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One TUM trajectory line: `timestamp tx ty tz qx qy qz qw`.
pub fn format_pose_line(timestamp: f64, pose: &PoseSE3) -> String {
    let q = pose.quaternion();
    let t = pose.translation;
    let values = [t.x, t.y, t.z, q[0], q[1], q[2], q[3]];
    let mut line = format!("{timestamp:.6}");
    for v in values {
        line.push(' ');
        line.push_str(&format_significant(v));
    }
    line
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, pose) in &traj.entries {
        out.push_str(&format_pose_line(*t, pose));
        out.push('\n');
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, format_trajectory(traj)).map_err(|e| Error::io(path, e))
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` starts a comment.
pub(crate) fn parse_pose_fields(fields: &[&str]) -> std::result::Result<(f64, PoseSE3), String> {
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    let mut v = [0.0; 8];
    for (slot, field) in v.iter_mut().zip(fields) {
        *slot = field
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("invalid number '{field}'"))?;
    }
    let pose = PoseSE3::from_quaternion(Vector3::new(v[1], v[2], v[3]), [v[4], v[5], v[6], v[7]])
        .map_err(|e| e.to_string())?;
    Ok((v[0], pose))
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    for (n, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let (t, pose) = parse_pose_fields(&fields).map_err(parse_err)?;
        traj.push(t, pose).map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}
