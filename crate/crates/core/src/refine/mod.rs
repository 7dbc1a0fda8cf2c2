//! Registration of the frames temporal matching left behind.
//!
//! New landmarks are triangulated from anchored queries, remaining frames
//! are resected incrementally against reference and new landmarks, and a
//! bundle adjustment polishes the registered frames and new landmarks with
//! the reference map and the anchor poses held fixed.

mod ba;
mod incremental;
mod triangulate;

pub use ba::{bundle_adjust, BaObservation, BaProblem, BaReport, BaResult};
pub use incremental::{refine_all, AugmentedLandmarks, Provenance, RefineOutput, RefineParams, RefinedFrame};
pub use triangulate::{triangulate, Triangulation, View};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("degenerate triangulation: {0}")]
    Degenerate(String),
}
