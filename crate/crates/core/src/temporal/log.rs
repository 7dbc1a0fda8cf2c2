//! JSON-lines record of every localization attempt and the final per-frame
//! state. The state records carry enough to resume with refinement.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AnchorSource, FrameStatus, QueryFrame, TemporalParams};
use crate::geom::{FrameId, LandmarkId, Pose};
use crate::pnp::RansacParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub queries: String,
    pub params: TemporalParams,
    pub ransac: RansacParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Header(LogHeader),
    Attempt {
        frame_id: FrameId,
        round: usize,
        kind: AnchorSource,
        correspondences: usize,
        inliers: usize,
        anchored: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    State {
        frame_id: FrameId,
        /// `None` while unlocalized.
        source: Option<AnchorSource>,
        round: usize,
        pose: Option<Pose>,
        inliers: usize,
        mean_reprojection_error: f64,
        /// Sparse `(keypoint, landmark)` associations.
        kp_landmark: Vec<(u32, LandmarkId)>,
        best_attempt: Option<(Pose, usize)>,
    },
}

impl LogRecord {
    pub fn state_of(qf: &QueryFrame) -> Self {
        let (source, round, pose, inliers, err) = match &qf.status {
            FrameStatus::Anchored { estimate, source, round } => (
                Some(*source),
                *round,
                Some(estimate.pose),
                estimate.num_inliers,
                estimate.mean_reprojection_error,
            ),
            FrameStatus::Unlocalized => (None, 0, None, 0, 0.0),
        };
        LogRecord::State {
            frame_id: qf.frame_id,
            source,
            round,
            pose,
            inliers,
            mean_reprojection_error: err,
            kp_landmark: qf
                .kp_landmark
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.map(|l| (i as u32, l)))
                .collect(),
            best_attempt: qf.best_attempt.map(|a| (a.pose, a.num_inliers)),
        }
    }
}

pub fn write_log<W: Write>(mut w: W, records: &[LogRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("log line {}: {e}", i + 1))?);
    }
    Ok(out)
}
