//! Robust Gauss-Newton at a single pyramid level.

use crate::error::Result;
use crate::geometry::{compose, PoseSE3};
use crate::imaging::PyramidLevel;

use super::residuals::{linearize, robust_scale, GradientSource, NormalEquations, ReferencePointSet};

/// Knobs of the per-level optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub max_iterations: usize,
    /// Stop once the increment norm falls below this.
    pub convergence_eps: f64,
    pub huber_tuning: f64,
    pub min_valid_points: usize,
    pub gradient: GradientSource,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_eps: 1e-6,
            huber_tuning: 1.345,
            min_valid_points: 300,
            gradient: GradientSource::CentralDifference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The last step raised the error and was reverted.
    ErrorIncrease,
    /// The last step lost too much overlap and was reverted.
    LostOverlap,
}

#[derive(Debug, Clone)]
pub struct LevelResult {
    /// Estimated warp, reference camera → new camera.
    pub warp: PoseSE3,
    pub final_error: f64,
    pub iterations: usize,
    pub inliers: usize,
    pub valid: usize,
    /// Weighted error after each accepted iterate (first entry: initial).
    pub error_history: Vec<f64>,
    pub termination: Termination,
}

/// Iteratively re-weighted Gauss-Newton from `init`.
///
/// The Huber threshold is re-estimated from the residuals after every
/// accepted step but never allowed to grow within a level; since `w·r²`
/// is non-decreasing in the threshold, the recorded error sequence is then
/// non-increasing.
pub fn gauss_newton_at_level(
    points: &ReferencePointSet,
    level: &PyramidLevel,
    init: &PoseSE3,
    params: &SolverParams,
) -> Result<LevelResult> {
    let mut warp = *init;
    let mut lin = linearize(points, level, &warp, params.gradient, params.min_valid_points)?;
    let mut k = robust_scale(&lin.residuals, params.huber_tuning)?;
    let mut normal = NormalEquations::accumulate(&lin, k);
    let mut history = vec![normal.total_error];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < params.max_iterations {
        iterations += 1;
        let step = normal.solve_step()?;
        let candidate = compose(&step, &warp);
        let candidate_lin = match linearize(points, level, &candidate, params.gradient, params.min_valid_points) {
            Ok(l) => l,
            Err(_) => {
                termination = Termination::LostOverlap;
                break;
            }
        };
        if candidate_lin.weighted_error(k) > normal.total_error {
            termination = Termination::ErrorIncrease;
            break;
        }
        warp = candidate;
        lin = candidate_lin;
        k = robust_scale(&lin.residuals, params.huber_tuning)?.min(k);
        normal = NormalEquations::accumulate(&lin, k);
        history.push(normal.total_error);
        if step.norm() < params.convergence_eps {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(LevelResult {
        warp,
        final_error: normal.total_error,
        iterations,
        inliers: normal.inlier_count,
        valid: normal.valid_count,
        error_history: history,
        termination,
    })
}
