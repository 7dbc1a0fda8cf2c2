//! Trajectory accuracy against ground truth.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{rotation_error_deg, translation_error, FrameId, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground truth for frames {0:?}")]
    MissingGroundTruth(Vec<FrameId>),
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
}

/// A frame is correct at a threshold when both errors are within bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Threshold {
    pub const fn new(translation: f64, rotation_deg: f64) -> Self {
        Self { translation, rotation_deg }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.translation >= 0.0 && self.rotation_deg >= 0.0) {
            return Err(EvalError::InvalidThreshold(format!("{self:?}")));
        }
        Ok(())
    }
}

pub const DEFAULT_THRESHOLDS: [Threshold; 3] = [
    Threshold::new(0.05, 5.0),
    Threshold::new(0.1, 5.0),
    Threshold::new(0.5, 15.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    pub translation: f64,
    pub rotation_deg: f64,
    /// Correct frames over all evaluated frames; unlocalized ones count as
    /// failures.
    pub percent: f64,
    /// Correct frames over localized frames only.
    pub percent_of_localized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub localized: usize,
    pub unlocalized: usize,
    /// Statistics over localized frames; `None` when there are none.
    pub median_translation: Option<f64>,
    pub median_rotation_deg: Option<f64>,
    pub mean_translation: Option<f64>,
    pub std_translation: Option<f64>,
    pub mean_rotation_deg: Option<f64>,
    pub std_rotation_deg: Option<f64>,
    pub accuracy: Vec<ThresholdAccuracy>,
    /// Wall-clock seconds per pipeline stage. Left empty by [`evaluate`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_s: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameError {
    pub frame_id: FrameId,
    /// `None` for unlocalized frames.
    pub translation: Option<f64>,
    pub rotation_deg: Option<f64>,
}

/// Per-frame errors of `est` against `gt`, in `est` order.
pub fn frame_errors(est: &[(FrameId, Option<Pose>)], gt: &[(FrameId, Pose)]) -> Result<Vec<FrameError>, EvalError> {
    let gt: HashMap<FrameId, &Pose> = gt.iter().map(|(id, p)| (*id, p)).collect();
    let missing: Vec<FrameId> = est.iter().map(|e| e.0).filter(|id| !gt.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingGroundTruth(missing));
    }
    Ok(est
        .iter()
        .map(|(id, pose)| {
            let g = gt[id];
            FrameError {
                frame_id: *id,
                translation: pose.map(|p| translation_error(&p, g)),
                rotation_deg: pose.map(|p| rotation_error_deg(&p, g)),
            }
        })
        .collect())
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Mean and population standard deviation.
fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Scores an estimated trajectory. Every entry of `est` is one evaluated
/// frame; a `None` pose marks it unlocalized.
pub fn evaluate(
    est: &[(FrameId, Option<Pose>)],
    gt: &[(FrameId, Pose)],
    thresholds: &[Threshold],
) -> Result<MetricsReport, EvalError> {
    for t in thresholds {
        t.validate()?;
    }
    let errs = frame_errors(est, gt)?;
    let located: Vec<(f64, f64)> = errs
        .iter()
        .filter_map(|e| Some((e.translation?, e.rotation_deg?)))
        .collect();
    let te: Vec<f64> = located.iter().map(|e| e.0).collect();
    let re: Vec<f64> = located.iter().map(|e| e.1).collect();
    let (mean_t, std_t) = mean_std(&te);
    let (mean_r, std_r) = mean_std(&re);
    let accuracy = thresholds
        .iter()
        .map(|t| {
            let ok = located
                .iter()
                .filter(|(a, b)| *a <= t.translation && *b <= t.rotation_deg)
                .count();
            ThresholdAccuracy {
                translation: t.translation,
                rotation_deg: t.rotation_deg,
                percent: percent(ok, errs.len()),
                percent_of_localized: percent(ok, located.len()),
            }
        })
        .collect();
    Ok(MetricsReport {
        frames: errs.len(),
        localized: located.len(),
        unlocalized: errs.len() - located.len(),
        median_translation: median(&te),
        median_rotation_deg: median(&re),
        mean_translation: mean_t,
        std_translation: std_t,
        mean_rotation_deg: mean_r,
        std_rotation_deg: std_r,
        accuracy,
        timings_s: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn pose(x: f64) -> Pose {
        Pose::new(UnitQuaternion::identity(), Vector3::new(x, 0.0, 0.0))
    }

    #[test]
    fn identical_trajectories_are_perfect() {
        let gt: Vec<_> = (0..5).map(|i| (i, pose(i as f64))).collect();
        let est: Vec<_> = gt.iter().map(|(i, p)| (*i, Some(*p))).collect();
        let r = evaluate(&est, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert!(r.accuracy.iter().all(|a| a.percent == 100.0));
        assert_eq!(r.median_translation, Some(0.0));
        assert_eq!(r.median_rotation_deg, Some(0.0));
    }

    #[test]
    fn hand_computed_two_frames() {
        let gt = vec![(0, pose(0.0)), (1, pose(0.0))];
        let rot = |deg: f64| UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians());
        // camera centre is -R^T t, so shift the centre explicitly
        let e0 = Pose::from_center(rot(1.0), &Vector3::new(0.01, 0.0, 0.0));
        let e1 = Pose::from_center(rot(1.0), &Vector3::new(0.3, 0.0, 0.0));
        let est = vec![(0, Some(e0)), (1, Some(e1))];
        let r = evaluate(&est, &gt, &[Threshold::new(0.1, 5.0), Threshold::new(0.5, 15.0)]).unwrap();
        assert_eq!(r.accuracy[0].percent, 50.0);
        assert_eq!(r.accuracy[1].percent, 100.0);
    }

    #[test]
    fn unlocalized_frames_fail_but_skip_medians() {
        let gt = vec![(0, pose(0.0)), (1, pose(0.0))];
        let est = vec![(0, Some(pose(0.0))), (1, None)];
        let r = evaluate(&est, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.unlocalized, 1);
        assert_eq!(r.accuracy[0].percent, 50.0);
        assert_eq!(r.accuracy[0].percent_of_localized, 100.0);
        assert_eq!(r.median_translation, Some(0.0));
    }

    #[test]
    fn missing_ground_truth_lists_ids() {
        let gt = vec![(0, pose(0.0))];
        let est = vec![(0, None), (7, None), (9, Some(pose(1.0)))];
        assert_eq!(evaluate(&est, &gt, &DEFAULT_THRESHOLDS), Err(EvalError::MissingGroundTruth(vec![7, 9])));
    }

    #[test]
    fn default_thresholds_include_table_columns() {
        assert!(DEFAULT_THRESHOLDS.contains(&Threshold::new(0.1, 5.0)));
        assert!(DEFAULT_THRESHOLDS.contains(&Threshold::new(0.5, 15.0)));
    }
}
