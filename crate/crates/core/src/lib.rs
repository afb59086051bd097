//! Multi-stage tissue and nuclei fusion for H&E histology frames.
//!
//! The engine consumes precomputed model outputs (score maps and instance
//! masks), runs frame classification, tissue ensembling, nuclei class voting,
//! auto-context refinement and post-processing, and scores results with
//! micro Dice, centroid detection F1 and panoptic quality.

pub mod error;
pub mod framecls;
pub mod fusion;
pub mod imgio;
pub mod nucfuse;
pub mod panmetrics;
pub mod par;
pub mod pipeline;
pub mod rescue;
pub mod schemes;

pub use error::{Error, Result};
pub use par::Exec;
