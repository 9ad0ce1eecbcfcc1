//! Edge pixels versus the same number of random pixels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::{rpe, EvalConfig};
use crate::sequence::FrameSource;

use super::{run_sequence, PixelSampling, TrackerConfig, DEFAULT_KEYFRAME_INTERVAL};

/// Seeded repetitions averaged per (mode, fraction).
pub const ABLATION_RUNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationMode {
    /// A random fraction of the edge pixels.
    EdgesSubset,
    /// The same number of pixels drawn from the whole valid-depth image.
    RandomPixels,
}

impl AblationMode {
    pub const ALL: [AblationMode; 2] = [AblationMode::EdgesSubset, AblationMode::RandomPixels];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::EdgesSubset => "edges-subset",
            AblationMode::RandomPixels => "random-pixels",
        }
    }

    fn sampling(self, fraction: f64, seed: u64) -> PixelSampling {
        match self {
            AblationMode::EdgesSubset => PixelSampling::EdgeSubset { fraction, seed },
            AblationMode::RandomPixels => PixelSampling::RandomPixels { fraction, seed },
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edges-subset" | "edges" => Ok(AblationMode::EdgesSubset),
            "random-pixels" | "random" => Ok(AblationMode::RandomPixels),
            other => Err(Error::InvalidArgument(format!("unknown ablation mode '{other}'"))),
        }
    }
}

/// Metrics of one seeded run, or the mean over several.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationResult {
    pub rpe: f64,
    pub pixels_mean: f64,
    pub latency_ms_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub fraction: f64,
    pub seed_count: usize,
    pub result: AblationResult,
}

/// The configuration the ablation runs under: keyframes on, motion prior off.
pub fn ablation_config(cfg: &TrackerConfig, mode: AblationMode, fraction: f64, seed: u64) -> TrackerConfig {
    TrackerConfig {
        keyframe_interval: if cfg.keyframe_interval == 0 {
            DEFAULT_KEYFRAME_INTERVAL
        } else {
            cfg.keyframe_interval
        },
        use_motion_prior: false,
        sampling: mode.sampling(fraction, seed),
        ..*cfg
    }
}

/// Tracks `sequence` once and scores it against its ground truth.
pub fn ablation_run(
    sequence: &dyn FrameSource,
    cfg: &TrackerConfig,
    mode: AblationMode,
    fraction: f64,
    seed: u64,
    eval: &EvalConfig,
) -> Result<AblationResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    let gt = sequence
        .groundtruth()
        .ok_or_else(|| Error::InvalidArgument("ablation needs ground truth".into()))?;
    let run = run_sequence(sequence, &ablation_config(cfg, mode, fraction, seed))?;
    let tracked = run.diagnostics.iter().skip(1).filter(|d| !d.lost).count();
    if tracked == 0 {
        return Err(Error::InsufficientPoints {
            found: 0,
            required: cfg.min_valid_points,
        });
    }
    Ok(AblationResult {
        rpe: rpe(gt, &run.trajectory, eval)?.rmse,
        pixels_mean: run.mean_pixels(),
        latency_ms_mean: run.mean_latency_ms(),
    })
}

/// Both modes at every fraction, each averaged over `runs` seeds starting
/// at `base_seed`.
pub fn ablation_study(
    sequence: &dyn FrameSource,
    cfg: &TrackerConfig,
    fractions: &[f64],
    base_seed: u64,
    runs: usize,
    eval: &EvalConfig,
) -> Result<Vec<AblationRow>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let mut rows = Vec::new();
    for mode in AblationMode::ALL {
        for &fraction in fractions {
            let mut sum = AblationResult {
                rpe: 0.0,
                pixels_mean: 0.0,
                latency_ms_mean: 0.0,
            };
            for r in 0..runs {
                let res = ablation_run(sequence, cfg, mode, fraction, base_seed + r as u64, eval)?;
                sum.rpe += res.rpe;
                sum.pixels_mean += res.pixels_mean;
                sum.latency_ms_mean += res.latency_ms_mean;
            }
            let n = runs as f64;
            rows.push(AblationRow {
                mode,
                fraction,
                seed_count: runs,
                result: AblationResult {
                    rpe: sum.rpe / n,
                    pixels_mean: sum.pixels_mean / n,
                    latency_ms_mean: sum.latency_ms_mean / n,
                },
            });
        }
    }
    Ok(rows)
}

/// Ordinary least squares `y = slope·x + intercept` and its R².
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("linear fit needs at least two (x, y) pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_exact_and_noisy() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, b, r2) = linear_fit(&xs, &[3.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        // Oracle: R² = 1 − SS_res/SS_tot.
        let ys = [2.0, 5.5, 6.0, 9.5];
        let (m, b, r2) = linear_fit(&xs, &ys).unwrap();
        let my = ys.iter().sum::<f64>() / 4.0;
        let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - (m * x + b)).powi(2)).sum();
        let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((r2 - (1.0 - ss_res / ss_tot)).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ablation_forces_keyframes_and_drops_prior() {
        let base = TrackerConfig {
            keyframe_interval: 0,
            ..Default::default()
        };
        let cfg = ablation_config(&base, AblationMode::RandomPixels, 0.5, 3);
        assert_eq!(cfg.keyframe_interval, DEFAULT_KEYFRAME_INTERVAL);
        assert!(!cfg.use_motion_prior);
        assert_eq!(cfg.sampling, PixelSampling::RandomPixels { fraction: 0.5, seed: 3 });
        assert_eq!("edges".parse::<AblationMode>().unwrap(), AblationMode::EdgesSubset);
        assert!("x".parse::<AblationMode>().is_err());
    }
}
