//! Absolute pose from 2D-3D correspondences.
//!
//! [`p3p`] is the minimal solver, [`dlt_pose`] a linear 6+-point fallback,
//! [`pnp_ransac`] the robust estimator built on both, and [`refine_pose_lm`]
//! the Huber-robust Levenberg-Marquardt polish applied to the RANSAC winner.

mod dlt;
mod lm;
mod p3p;
mod ransac;

pub use dlt::dlt_pose;
pub(crate) use lm::{huber, huber_weight};
pub use lm::{refine_pose_lm, refine_pose_lm_with, LmConfig, LmReport};
pub use p3p::p3p;
pub use ransac::{pnp_ransac, score_pose, PoseEstimate, RansacParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{LandmarkId, Pixel, Point3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("no consensus: best hypothesis had {best_inliers} inliers")]
    NoConsensus { best_inliers: usize },
}

/// A pixel observation paired with a world point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence2D3D {
    pub pixel: Pixel,
    pub point: Point3,
    pub landmark_id: Option<LandmarkId>,
    /// Match confidence in `[0, 1]`.
    pub score: f32,
}

impl Correspondence2D3D {
    pub fn new(pixel: Pixel, point: Point3) -> Self {
        Self {
            pixel,
            point,
            landmark_id: None,
            score: 1.0,
        }
    }
}

/// Area of the triangle spanned by three world points.
pub(crate) fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}
