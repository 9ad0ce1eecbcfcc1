use std::path::PathBuf;

/// Errors produced anywhere in the odometry pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),

    #[error("pyramid level {0} exceeds the maximum of 2")]
    LevelTooDeep(usize),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("image too small: {width}x{height} (minimum {min})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("insufficient points: {found} valid, {required} required")]
    InsufficientPoints { found: usize, required: usize },

    #[error("insufficient overlap: {found} residuals valid, {required} required")]
    InsufficientOverlap { found: usize, required: usize },

    #[error("degenerate geometry: normal equations are singular")]
    DegenerateGeometry,

    #[error("degenerate alignment: point configuration is collinear or coincident")]
    DegenerateAlignment,

    #[error("too few pose pairs for evaluation: {0}")]
    TooFewPairs(usize),

    #[error("no temporal overlap between the two timestamp lists")]
    NoOverlap,

    #[error("no scene geometry visible from this pose")]
    NothingVisible,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported image format in {path}: {message}")]
    ImageFormat { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data rather than by misuse of the API.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::MissingFile(_)
                | Error::ImageFormat { .. }
                | Error::Io { .. }
                | Error::Codec { .. }
                | Error::NoOverlap
                | Error::TooFewPairs(_)
                | Error::DegenerateAlignment
        )
    }
}
