//! Configuration, dataset loading, evaluation and the end-to-end pipeline.
//!
//! A dataset directory holds `intrinsics.txt`, `map/` (frames plus
//! `poses.txt`), `queries/` and optionally `gt/poses.txt`. Frames are either
//! `.afeat` feature files or grayscale PNG images, named by numeric frame id.

mod dataset;
mod eval;
mod export;
mod pipeline;

pub use dataset::{list_frames, load_dataset, load_frame, load_intrinsics, load_map_frames, load_query_frames, Dataset};
pub use eval::{evaluate, frame_errors, EvalError, FrameError, MetricsReport, Threshold, ThresholdAccuracy, DEFAULT_THRESHOLDS};
pub use export::{read_provenance, trajectory_svg, write_provenance, write_trajectory_csv, ProvenanceRow};
pub use pipeline::{localize_stage, refine_stage, restore_frames, run_pipeline, write_trajectory, PipelineOutcome};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapdb::MapParams;
use crate::pnp::RansacParams;
use crate::refine::RefineParams;
use crate::temporal::TemporalParams;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 for validation errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

/// RANSAC settings without the seed, which the pipeline derives from
/// [`PipelineConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        let r = RansacParams::default();
        Self {
            inlier_threshold: r.inlier_threshold,
            max_iterations: r.max_iterations,
            confidence: r.confidence,
        }
    }
}

/// Everything `run` needs. Every field has a default; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Directory of enhanced query images that replaces `dataset/queries`.
    pub enhanced_queries: Option<PathBuf>,
    pub seed: u64,
    pub map: MapParams,
    pub localize: TemporalParams,
    pub ransac: RansacConfig,
    pub refine: RefineParams,
    pub thresholds: Vec<Threshold>,
    /// Keep only globally matched anchors: no temporal rounds, no refinement.
    pub global_only: bool,
    /// Skip the refinement stage.
    pub no_refine: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            enhanced_queries: None,
            seed: 0,
            map: MapParams::default(),
            localize: TemporalParams::default(),
            ransac: RansacConfig::default(),
            refine: RefineParams::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            global_only: false,
            no_refine: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Validation(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn ransac_params(&self) -> RansacParams {
        RansacParams {
            inlier_threshold: self.ransac.inlier_threshold,
            max_iterations: self.ransac.max_iterations,
            confidence: self.ransac.confidence,
            seed: self.seed,
        }
    }

    /// Checks every parameter block; paths are checked only if set.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let v = PipelineError::Validation;
        self.map.validate().map_err(|e| v(e.to_string()))?;
        self.localize.validate().map_err(|e| v(e.to_string()))?;
        self.ransac_params().validate().map_err(v)?;
        self.refine.validate().map_err(v)?;
        for t in &self.thresholds {
            t.validate().map_err(|e| v(e.to_string()))?;
        }
        for (name, p) in [("dataset", &self.dataset), ("enhanced_queries", &self.enhanced_queries)] {
            if let Some(p) = p {
                if !p.is_dir() {
                    return Err(v(format!("{name} directory {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&json).unwrap(), c);
        assert_eq!(c.localize.n_r, 30);
        assert_eq!(c.localize.window, 30);
        assert_eq!(c.localize.iterations, 10);
        assert_eq!(c.localize.min_inliers, 50);
        assert_eq!(c.map.max_keypoints, 512);
        assert_eq!(c.map.adjacency, 50);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = PipelineConfig::from_json(r#"{"seed": 4, "localize": {"window": 10}}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.localize.window, 10);
        assert_eq!(c.localize.n_r, 30);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"sede": 4}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"localize": {"windw": 4}}"#).is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let c = PipelineConfig::from_json(r#"{"localize": {"iterations": 0}}"#).unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
