//! Command-line front end: `run`, `eval`, `ablate` and `synth`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 tracking aborted
//! (no frame could be tracked).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{parse_camera_file, DatasetOptions, TumSequence};
use crate::edges::EdgeDetectorKind;
use crate::error::Error;
use crate::evaluation::{ate, read_trajectory, rpe, write_trajectory, EvalConfig, MetricResult, Trajectory};
use crate::sequence::FrameSource;
use crate::synthetic::{benchmark_sequence, write_tum_sequence};
use crate::tracker::ablation::{ablation_study, AblationRow, ABLATION_RUNS};
use crate::tracker::{run_sequence, FrameDiagnostics, GradientSource, SequenceRun, TrackerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

/// Version tag written on the first line of the diagnostics CSV.
pub const DIAGNOSTICS_SCHEMA: &str = "# edvo-diagnostics v1";
pub const DIAGNOSTICS_HEADER: &str = "frame_ts,level0_iters,level1_iters,level2_iters,error,inliers,pixels,latency_ms,lost";
pub const ABLATION_HEADER: &str = "mode,fraction,seed_count,rpe_mps,pixels_mean,latency_ms_mean";

#[derive(Debug, Parser)]
#[command(name = "edvo", version, about = "Edge-direct RGB-D visual odometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a TUM-format sequence directory.
    Run(RunArgs),
    /// Score an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Edge pixels versus random pixels at several sampling fractions.
    Ablate(AblateArgs),
    /// Render the synthetic benchmark sequence to a TUM-format directory.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Canny,
    Log,
    Sobel,
}

impl From<DetectorArg> for EdgeDetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Canny => EdgeDetectorKind::Canny,
            DetectorArg::Log => EdgeDetectorKind::Log,
            DetectorArg::Sobel => EdgeDetectorKind::Sobel,
        }
    }
}

/// Tracker options shared by `run` and `ablate`.
#[derive(Debug, Clone, Default, Args)]
pub struct TrackerArgs {
    /// Edge detector selecting the residual support.
    #[arg(long, value_enum)]
    pub edge: Option<DetectorArg>,
    /// Replace the reference every N frames; 0 tracks frame to frame.
    #[arg(long, value_name = "N")]
    pub keyframe: Option<usize>,
    /// Start each frame from identity instead of the previous motion.
    #[arg(long)]
    pub no_motion_prior: bool,
    /// Pyramid levels (1 to 3).
    #[arg(long, value_name = "L")]
    pub levels: Option<usize>,
    /// key=value file with tracker and dataset settings; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Camera file ("fx 517.3" lines) overriding intrinsics detection.
    #[arg(long, value_name = "FILE")]
    pub intrinsics: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub dataset_dir: PathBuf,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    /// Trajectory output (TUM format); stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-frame diagnostics CSV.
    #[arg(long, value_name = "FILE")]
    pub diag: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Rpe,
    Ate,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub est: PathBuf,
    #[arg(long, value_enum, default_value = "rpe")]
    pub metric: MetricArg,
    /// RPE interval in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Per-sample error CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    pub dataset_dir: PathBuf,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.25,0.5,1.0")]
    pub fractions: Vec<f64>,
    /// First of the consecutive sampling seeds.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = ABLATION_RUNS)]
    pub runs: usize,
    /// RPE interval in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// CSV output; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Camera speed in m/s.
    #[arg(long, default_value_t = 0.1)]
    pub velocity: f64,
    /// Standard deviation of additive intensity noise (intensities in [0, 1]).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// A failed command, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(Error),
    #[error("tracking aborted: {0}")]
    Aborted(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Aborted(_) => EXIT_ABORTED,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

/// Outcome of `run`.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub run: SequenceRun,
}

impl RunReport {
    pub fn trajectory(&self) -> &Trajectory {
        &self.run.trajectory
    }

    pub fn diagnostics(&self) -> &[FrameDiagnostics] {
        &self.run.diagnostics
    }

    pub fn mean_latency_ms(&self) -> f64 {
        self.run.mean_latency_ms()
    }

    pub fn mean_pixels(&self) -> f64 {
        self.run.mean_pixels()
    }

    pub fn frames_tracked(&self) -> usize {
        self.run.tracked_frames()
    }

    pub fn frames_lost(&self) -> usize {
        self.run.lost_frames()
    }
}

/// Settings read from a `key = value` file. Blank lines and `#` comments
/// are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, Error> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            entries.insert(key.trim().replace('-', "_"), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, Error> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Applies the file over `cfg` and `opts`; unknown keys are rejected.
    pub fn apply(&self, cfg: &mut TrackerConfig, opts: &mut DatasetOptions) -> Result<(), Error> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Error> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("config key '{key}': cannot parse '{v}'")))
        }
        for (key, v) in &self.entries {
            match key.as_str() {
                "edge" | "detector" => cfg.detector = v.parse()?,
                "keyframe" | "keyframe_interval" => cfg.keyframe_interval = num(key, v)?,
                "motion_prior" | "use_motion_prior" => cfg.use_motion_prior = parse_bool(key, v)?,
                "levels" | "pyramid_levels" => cfg.pyramid_levels = num(key, v)?,
                "max_iterations" | "max_iterations_per_level" => cfg.max_iterations_per_level = num(key, v)?,
                "convergence_eps" => cfg.convergence_eps = num(key, v)?,
                "huber_tuning" => cfg.huber_tuning = num(key, v)?,
                "min_valid_points" => cfg.min_valid_points = num(key, v)?,
                "gradient" => {
                    cfg.gradient = match v.as_str() {
                        "central" | "central_difference" => GradientSource::CentralDifference,
                        "interpolant" => GradientSource::Interpolant,
                        _ => return Err(Error::InvalidArgument(format!("unknown gradient source '{v}'"))),
                    }
                }
                "max_difference" => opts.max_difference = num(key, v)?,
                "depth_scale" => opts.depth_scale = num(key, v)?,
                _ => return Err(Error::InvalidArgument(format!("unknown config key '{key}'"))),
            }
        }
        Ok(())
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, Error> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("config key '{key}': expected a boolean, got '{v}'"))),
    }
}

/// Resolves defaults, then the config file, then flags.
pub fn resolve_settings(args: &TrackerArgs) -> Result<(TrackerConfig, DatasetOptions), Error> {
    let mut cfg = TrackerConfig::default();
    let mut opts = DatasetOptions::default();
    if let Some(path) = &args.config {
        ConfigFile::read(path)?.apply(&mut cfg, &mut opts)?;
    }
    if let Some(edge) = args.edge {
        cfg.detector = edge.into();
    }
    if let Some(n) = args.keyframe {
        cfg.keyframe_interval = n;
    }
    if args.no_motion_prior {
        cfg.use_motion_prior = false;
    }
    if let Some(l) = args.levels {
        cfg.pyramid_levels = l;
    }
    if let Some(path) = &args.intrinsics {
        if !path.exists() {
            return Err(Error::MissingFile(path.clone()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        opts.intrinsics = Some(parse_camera_file(&text, path)?);
    }
    cfg.validate()?;
    Ok((cfg, opts))
}

pub fn format_diagnostics_csv(rows: &[FrameDiagnostics]) -> String {
    let mut out = format!("{DIAGNOSTICS_SCHEMA}\n{DIAGNOSTICS_HEADER}\n");
    for d in rows {
        let _ = writeln!(
            out,
            "{:.6},{},{},{},{:.6e},{},{},{:.3},{}",
            d.timestamp,
            d.level_iterations[0],
            d.level_iterations[1],
            d.level_iterations[2],
            d.final_error,
            d.inliers,
            d.pixels,
            d.latency_ms,
            u8::from(d.lost)
        );
    }
    out
}

pub fn format_ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.1},{:.3}",
            r.mode, r.fraction, r.seed_count, r.result.rpe, r.result.pixels_mean, r.result.latency_ms_mean
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_run(args: &RunArgs) -> Result<RunReport, CliError> {
    let (cfg, opts) = resolve_settings(&args.tracker)?;
    let seq = TumSequence::open(&args.dataset_dir, &opts).map_err(CliError::Data)?;
    log::info!("{} associated frames in {}", seq.len(), args.dataset_dir.display());
    let run = run_sequence(&seq, &cfg).map_err(CliError::Data)?;
    let report = RunReport { run };
    if let Some(path) = &args.out {
        write_trajectory(report.trajectory(), path)?;
    } else {
        print!("{}", crate::evaluation::format_trajectory(report.trajectory()));
    }
    if let Some(path) = &args.diag {
        write_text(path, &format_diagnostics_csv(report.diagnostics()))?;
    }
    if report.frames_tracked() == 0 {
        return Err(CliError::Aborted("no frame could be tracked".into()));
    }
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricResult, CliError> {
    let gt = read_trajectory(&args.gt)?;
    let est = read_trajectory(&args.est)?;
    let cfg = EvalConfig {
        delta_t: args.delta,
        ..Default::default()
    };
    let result = match args.metric {
        MetricArg::Rpe => rpe(&gt, &est, &cfg),
        MetricArg::Ate => ate(&gt, &est, &cfg),
    }
    .map_err(CliError::Data)?;
    if let Some(path) = &args.csv {
        result.write_csv(path)?;
    }
    Ok(result)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>, CliError> {
    let (cfg, opts) = resolve_settings(&args.tracker)?;
    if args.fractions.is_empty() {
        return Err(CliError::Usage("at least one fraction is required".into()));
    }
    let seq = TumSequence::open(&args.dataset_dir, &opts).map_err(CliError::Data)?;
    if seq.groundtruth().is_none() {
        return Err(CliError::Data(Error::MissingFile(args.dataset_dir.join("groundtruth.txt"))));
    }
    let eval = EvalConfig {
        delta_t: args.delta,
        ..Default::default()
    };
    let rows = ablation_study(&seq, &cfg, &args.fractions, args.seed, args.runs, &eval)
        .map_err(|e| match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            Error::InsufficientPoints { .. } => CliError::Aborted(e.to_string()),
            other => CliError::Data(other),
        })?;
    let csv = format_ablation_csv(&rows);
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(rows)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.frames == 0 {
        return Err(CliError::Usage("--frames must be > 0".into()));
    }
    let seq = benchmark_sequence(args.frames, args.velocity, args.noise, args.seed)?;
    write_tum_sequence(&seq, &args.out)?;
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Results go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|r| {
            eprintln!(
                "tracked {} frames ({} lost), mean {:.0} pixels, {:.2} ms/frame",
                r.frames_tracked(),
                r.frames_lost(),
                r.mean_pixels(),
                r.mean_latency_ms()
            );
        }),
        Command::Eval(a) => cmd_eval(a).map(|r| println!("{:.5}", r.rmse)),
        Command::Ablate(a) => cmd_ablate(a).map(|_| ()),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("edvo: {e}");
            e.exit_code()
        }
    }
}
