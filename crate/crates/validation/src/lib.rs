//! Helpers shared by the acceptance suite: turning synthetic sequences into
//! pipeline inputs and summarizing error samples.

use anchorloc::mapdb::{build_map, MapParams, PosedFrame, SceneDatabase};
use anchorloc::synth::{Scenario, SyntheticSequence};
use anchorloc::temporal::QueryFrame;

/// Map frames with their ground-truth poses.
pub fn posed(seq: &SyntheticSequence) -> Vec<PosedFrame> {
    seq.frames
        .iter()
        .map(|f| PosedFrame {
            frame_id: f.frame_id,
            image_ref: f.frame_id.to_string(),
            pose: f.pose,
            keypoints: f.keypoints.clone(),
            global: f.global.clone(),
        })
        .collect()
}

/// Fresh, unlocalized query frames.
pub fn queries(seq: &SyntheticSequence) -> Vec<QueryFrame> {
    seq.frames
        .iter()
        .map(|f| QueryFrame::new(f.frame_id, f.keypoints.clone(), f.global.clone()))
        .collect()
}

/// # Panics
/// If the scenario's map sequence does not produce a database.
pub fn database(sc: &Scenario, params: &MapParams) -> SceneDatabase {
    build_map(posed(&sc.map), &sc.k, params).expect("scenario map builds")
}

/// Median with the mean of the two middle values for even counts; NaN when
/// empty. Infinite entries are ordinary large values.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
