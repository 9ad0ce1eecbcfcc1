//! Random-access frame sequences.

use crate::error::{Error, Result};
use crate::evaluation::Trajectory;
use crate::geometry::CameraIntrinsics;
use crate::tracker::Frame;

/// An ordered, random-access list of RGB-D frames from one camera.
pub trait FrameSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn intrinsics(&self) -> CameraIntrinsics;

    fn timestamp(&self, index: usize) -> f64;

    /// Loads (or clones) frame `index`.
    fn frame(&self, index: usize) -> Result<Frame>;

    fn groundtruth(&self) -> Option<&Trajectory> {
        None
    }
}

/// Frames held in memory, e.g. rendered synthetically.
#[derive(Debug, Clone)]
pub struct InMemorySequence {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub groundtruth: Option<Trajectory>,
}

impl InMemorySequence {
    pub fn new(intrinsics: CameraIntrinsics, frames: Vec<Frame>, groundtruth: Option<Trajectory>) -> Result<Self> {
        let dims = (intrinsics.width, intrinsics.height);
        if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: bad.dims(),
            });
        }
        if frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::InvalidArgument("frame timestamps must be strictly increasing".into()));
        }
        Ok(Self {
            intrinsics,
            frames,
            groundtruth,
        })
    }

    /// Keeps only the frames in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let frames = self.frames[range].to_vec();
        let groundtruth = self.groundtruth.as_ref().map(|gt| {
            let (first, last) = match (frames.first(), frames.last()) {
                (Some(a), Some(b)) => (a.timestamp, b.timestamp),
                _ => (f64::INFINITY, f64::NEG_INFINITY),
            };
            gt.between(first, last)
        });
        Self {
            intrinsics: self.intrinsics,
            frames,
            groundtruth,
        }
    }
}

impl FrameSource for InMemorySequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn timestamp(&self, index: usize) -> f64 {
        self.frames[index].timestamp
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.frames
            .get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("frame index {index} out of range")))
    }

    fn groundtruth(&self) -> Option<&Trajectory> {
        self.groundtruth.as_ref()
    }
}
