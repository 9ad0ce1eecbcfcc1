//! Edge-direct visual odometry for RGB-D cameras.
//!
//! Camera motion between frames is estimated by minimizing the
//! Huber-weighted photometric error of reference pixels selected by an edge
//! mask of the new image, with coarse-to-fine Gauss-Newton on SE(3).
//!
//! ```no_run
//! use edvo::dataset::{DatasetOptions, TumSequence};
//! use edvo::tracker::{run_sequence, TrackerConfig};
//!
//! let seq = TumSequence::open("rgbd_dataset_freiburg1_xyz".as_ref(), &DatasetOptions::default())?;
//! let run = run_sequence(&seq, &TrackerConfig::default())?;
//! edvo::evaluation::write_trajectory(&run.trajectory, "traj.txt".as_ref())?;
//! # Ok::<(), edvo::Error>(())
//! ```

pub mod cli;
pub mod dataset;
pub mod edges;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod sequence;
pub mod synthetic;
pub mod tracker;

pub use error::{Error, Result};
