//! Anchor selection and iterative temporal propagation.
//!
//! Every query is first matched against its retrieved map frames; frames
//! with at least `s` PnP inliers become anchors. Then, round by round, each
//! remaining frame is matched against the anchors inside its two-sided
//! window, borrowing the anchors' keypoint-to-landmark associations as 2D-3D
//! correspondences. Anchors found in a round are committed only when the
//! round ends, so a round's outcome does not depend on processing order.

mod log;

pub use log::{read_log, write_log, LogHeader, LogRecord};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{match_features, GlobalDescriptor, KeypointSet, DEFAULT_RATIO};
use crate::geom::{CameraIntrinsics, FrameId, LandmarkId, Point3, Pose};
use crate::mapdb::{retrieve, SceneDatabase};
use crate::pnp::{pnp_ransac, Correspondence2D3D, PnpError, PoseEstimate, RansacParams};
use crate::seed::derive;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("no anchor inside the temporal window")]
    NoAnchorsInWindow,
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalParams {
    /// Map frames retrieved per query.
    pub n_r: usize,
    /// Window length `L`; anchors with `|q_j - q| <= L / 2` are used.
    pub window: usize,
    pub iterations: usize,
    /// Inlier count `s` an estimate needs to make its frame an anchor.
    pub min_inliers: usize,
    pub ratio: f64,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self {
            n_r: 30,
            window: 30,
            iterations: 10,
            min_inliers: 50,
            ratio: DEFAULT_RATIO,
        }
    }
}

impl TemporalParams {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let bad = |m: &str| Err(TemporalError::InvalidParams(m.into()));
        if self.n_r == 0 {
            return bad("n_r must be at least 1");
        }
        if self.window < 2 || !self.window.is_multiple_of(2) {
            return bad("window must be an even number of at least 2");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.min_inliers < 4 {
            return bad("min_inliers must be at least 4");
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Where an anchor's pose came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSource {
    Global,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FrameStatus {
    Unlocalized,
    Anchored {
        estimate: PoseEstimate,
        source: AnchorSource,
        /// 0 for global anchors, otherwise the temporal round.
        round: usize,
    },
}

/// Best estimate a frame reached without passing the anchor gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub pose: Pose,
    pub num_inliers: usize,
    pub round: usize,
}

/// A landmark suggested for one keypoint, with its match score.
pub type Candidate = (LandmarkId, f32);

#[derive(Debug, Clone, PartialEq)]
pub struct QueryFrame {
    pub frame_id: FrameId,
    pub keypoints: KeypointSet,
    pub global: GlobalDescriptor,
    pub status: FrameStatus,
    /// Landmark associated with each keypoint once the frame is anchored.
    pub kp_landmark: Vec<Option<LandmarkId>>,
    pub best_attempt: Option<Attempt>,
    /// Every landmark proposed for each keypoint by map matching, best first.
    pub candidates: Vec<Vec<Candidate>>,
}

impl QueryFrame {
    pub fn new(frame_id: FrameId, keypoints: KeypointSet, global: GlobalDescriptor) -> Self {
        let n = keypoints.len();
        Self {
            frame_id,
            keypoints,
            global,
            status: FrameStatus::Unlocalized,
            kp_landmark: vec![None; n],
            best_attempt: None,
            candidates: vec![Vec::new(); n],
        }
    }

    pub fn is_anchored(&self) -> bool {
        matches!(self.status, FrameStatus::Anchored { .. })
    }

    pub fn pose(&self) -> Option<Pose> {
        match &self.status {
            FrameStatus::Anchored { estimate, .. } => Some(estimate.pose),
            FrameStatus::Unlocalized => None,
        }
    }
}

/// Read access to landmark positions, so temporal matching can use
/// landmarks that live outside the map database.
pub trait LandmarkSource: Sync {
    fn position(&self, id: LandmarkId) -> Option<Point3>;
}

impl LandmarkSource for SceneDatabase {
    fn position(&self, id: LandmarkId) -> Option<Point3> {
        self.landmark(id).map(|l| l.position)
    }
}

/// Result of one matching attempt for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub correspondences: Vec<Correspondence2D3D>,
    /// Query keypoint behind each correspondence.
    pub keypoint_of: Vec<u32>,
    /// All candidates per keypoint, best first.
    pub candidates: Vec<Vec<Candidate>>,
    pub estimate: Result<PoseEstimate, TemporalError>,
}

impl MatchResult {
    pub fn num_inliers(&self) -> usize {
        self.estimate.as_ref().map(|e| e.num_inliers).unwrap_or(0)
    }
}

/// Seed for the RANSAC run of `frame` in `round`; independent of thread
/// scheduling and processing order.
pub fn attempt_seed(seed: u64, frame: FrameId, round: usize) -> u64 {
    derive(&[seed, frame as u64, round as u64])
}

fn add_candidate(list: &mut Vec<Candidate>, id: LandmarkId, score: f32) {
    match list.iter_mut().find(|c| c.0 == id) {
        Some(c) => c.1 = c.1.max(score),
        None => list.push((id, score)),
    }
}

fn sort_candidates(cands: &mut [Vec<Candidate>]) {
    for list in cands {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
}

/// One correspondence per keypoint: its highest-scoring candidate.
fn best_correspondences(
    qf: &QueryFrame,
    cands: &[Vec<Candidate>],
    landmarks: &dyn LandmarkSource,
) -> (Vec<Correspondence2D3D>, Vec<u32>) {
    let mut corr = Vec::new();
    let mut kp_of = Vec::new();
    for (kp, list) in cands.iter().enumerate() {
        let Some(&(id, score)) = list.first() else {
            continue;
        };
        let Some(point) = landmarks.position(id) else {
            continue;
        };
        corr.push(Correspondence2D3D {
            pixel: qf.keypoints.point(kp),
            point,
            landmark_id: Some(id),
            score,
        });
        kp_of.push(kp as u32);
    }
    (corr, kp_of)
}

fn solve(
    qf: &QueryFrame,
    cands: Vec<Vec<Candidate>>,
    landmarks: &dyn LandmarkSource,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> MatchResult {
    let (correspondences, keypoint_of) = best_correspondences(qf, &cands, landmarks);
    let estimate = pnp_ransac(&correspondences, k, ransac).map_err(TemporalError::from);
    MatchResult {
        correspondences,
        keypoint_of,
        candidates: cands,
        estimate,
    }
}

/// Matches the query against its top-`n_r` retrieved map frames; every
/// match onto a landmark-bearing map keypoint proposes that landmark, and
/// each query keypoint keeps its highest-scoring proposal for PnP.
pub fn global_match(
    qf: &QueryFrame,
    db: &SceneDatabase,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> MatchResult {
    let mut cands: Vec<Vec<Candidate>> = vec![Vec::new(); qf.keypoints.len()];
    let retrieved = retrieve(db, &qf.global, params.n_r).unwrap_or_default();
    for fid in retrieved {
        let Some(mf) = db.frame(fid) else { continue };
        if mf.keypoints.dim() != qf.keypoints.dim() {
            continue;
        }
        for m in match_features(&qf.keypoints, &mf.keypoints, params.ratio).iter() {
            if let Some(id) = mf.point_ids[m.b as usize] {
                add_candidate(&mut cands[m.a as usize], id, m.score);
            }
        }
    }
    sort_candidates(&mut cands);
    solve(qf, cands, db, k, ransac)
}

/// Matches the query against the anchors of `frames` whose ids lie within
/// `window / 2` of it, turning anchor keypoints with known landmarks into
/// correspondences.
pub fn temporal_match(
    qf: &QueryFrame,
    frames: &[QueryFrame],
    landmarks: &dyn LandmarkSource,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> MatchResult {
    let half = (params.window / 2) as i64;
    let anchors: Vec<&QueryFrame> = frames
        .iter()
        .filter(|a| {
            let d = a.frame_id as i64 - qf.frame_id as i64;
            d != 0 && d.abs() <= half && a.is_anchored()
        })
        .collect();
    let mut cands: Vec<Vec<Candidate>> = vec![Vec::new(); qf.keypoints.len()];
    if anchors.is_empty() {
        return MatchResult {
            correspondences: Vec::new(),
            keypoint_of: Vec::new(),
            candidates: cands,
            estimate: Err(TemporalError::NoAnchorsInWindow),
        };
    }
    for a in anchors {
        if a.keypoints.dim() != qf.keypoints.dim() {
            continue;
        }
        for m in match_features(&qf.keypoints, &a.keypoints, params.ratio).iter() {
            if let Some(id) = a.kp_landmark[m.b as usize] {
                add_candidate(&mut cands[m.a as usize], id, m.score);
            }
        }
    }
    sort_candidates(&mut cands);
    solve(qf, cands, landmarks, k, ransac)
}

/// Keypoint-to-landmark associations implied by an accepted estimate: the
/// inliers first, then, for the remaining keypoints, the best candidate
/// from any source that reprojects within the inlier threshold. A landmark
/// is given to at most one keypoint.
pub fn associate(
    qf: &QueryFrame,
    result: &MatchResult,
    estimate: &PoseEstimate,
    landmarks: &dyn LandmarkSource,
    k: &CameraIntrinsics,
    threshold: f64,
) -> Vec<Option<LandmarkId>> {
    let n = qf.keypoints.len();
    let mut out: Vec<Option<LandmarkId>> = vec![None; n];
    let mut used = std::collections::HashSet::new();
    for (i, c) in result.correspondences.iter().enumerate() {
        if estimate.inlier_mask[i] {
            let id = c.landmark_id.expect("correspondences carry landmark ids");
            if used.insert(id) {
                out[result.keypoint_of[i] as usize] = Some(id);
            }
        }
    }
    let mut extra: Vec<(f32, u32, LandmarkId)> = Vec::new();
    for kp in 0..n {
        if out[kp].is_some() {
            continue;
        }
        for list in [&result.candidates[kp], &qf.candidates[kp]] {
            for &(id, score) in list {
                extra.push((score, kp as u32, id));
            }
        }
    }
    extra.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, kp, id) in extra {
        if out[kp as usize].is_some() || used.contains(&id) {
            continue;
        }
        let Some(x) = landmarks.position(id) else { continue };
        let ok = crate::geom::project(&estimate.pose, k, &x)
            .map(|p| (p - qf.keypoints.point(kp as usize)).norm() <= threshold)
            .unwrap_or(false);
        if ok {
            used.insert(id);
            out[kp as usize] = Some(id);
        }
    }
    out
}

/// Outcome of [`localize_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub frames: Vec<QueryFrame>,
    pub log: Vec<LogRecord>,
    /// Temporal rounds executed, including a final zero-growth round.
    pub rounds: usize,
}

impl Localization {
    /// Ids of anchored frames, ascending.
    pub fn anchor_ids(&self) -> Vec<FrameId> {
        self.frames.iter().filter(|f| f.is_anchored()).map(|f| f.frame_id).collect()
    }

    /// Appends one state record per frame to the log.
    pub fn append_states(&mut self) {
        for qf in &self.frames {
            self.log.push(LogRecord::state_of(qf));
        }
    }
}

fn attempt_record(qf: &QueryFrame, round: usize, kind: AnchorSource, r: &MatchResult, anchored: bool) -> LogRecord {
    LogRecord::Attempt {
        frame_id: qf.frame_id,
        round,
        kind,
        correspondences: r.correspondences.len(),
        inliers: r.num_inliers(),
        anchored,
        error: r.estimate.as_ref().err().map(|e| e.to_string()),
    }
}

fn note_attempt(qf: &mut QueryFrame, r: &MatchResult, round: usize) {
    if let Ok(e) = &r.estimate {
        if qf.best_attempt.is_none_or(|b| e.num_inliers > b.num_inliers) {
            qf.best_attempt = Some(Attempt {
                pose: e.pose,
                num_inliers: e.num_inliers,
                round,
            });
        }
    }
}

fn anchor(qf: &mut QueryFrame, r: &MatchResult, source: AnchorSource, round: usize, landmarks: &dyn LandmarkSource, k: &CameraIntrinsics, threshold: f64) {
    let estimate = r.estimate.clone().expect("anchoring needs an estimate");
    qf.kp_landmark = associate(qf, r, &estimate, landmarks, k, threshold);
    qf.status = FrameStatus::Anchored { estimate, source, round };
}

/// Runs one synchronous temporal round over `order` (indices into `frames`)
/// and returns the accepted results without committing them.
fn temporal_round(
    frames: &[QueryFrame],
    order: &[usize],
    landmarks: &dyn LandmarkSource,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
    round: usize,
) -> Vec<(usize, MatchResult)> {
    let mut results: Vec<(usize, MatchResult)> = order
        .par_iter()
        .filter(|&&i| !frames[i].is_anchored())
        .map(|&i| {
            let rp = RansacParams {
                seed: attempt_seed(ransac.seed, frames[i].frame_id, round),
                ..*ransac
            };
            (i, temporal_match(&frames[i], frames, landmarks, params, k, &rp))
        })
        .collect();
    results.sort_by_key(|r| r.0);
    results
}

fn check_inputs(queries: &[QueryFrame], params: &TemporalParams, ransac: &RansacParams) -> Result<(), TemporalError> {
    params.validate()?;
    ransac.validate().map_err(TemporalError::InvalidParams)?;
    for w in queries.windows(2) {
        if w[0].frame_id >= w[1].frame_id {
            return Err(TemporalError::InvalidParams("queries must be sorted by increasing frame id".into()));
        }
    }
    Ok(())
}

/// Global matching for every query; frames reaching `min_inliers` become
/// anchors. `ransac.seed` is the base seed; each attempt derives its own.
pub fn localize_global(
    queries: Vec<QueryFrame>,
    db: &SceneDatabase,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> Result<Localization, TemporalError> {
    check_inputs(&queries, params, ransac)?;
    let mut frames = queries;
    let mut log = Vec::new();
    let global: Vec<MatchResult> = frames
        .par_iter()
        .map(|qf| {
            let rp = RansacParams {
                seed: attempt_seed(ransac.seed, qf.frame_id, 0),
                ..*ransac
            };
            global_match(qf, db, params, k, &rp)
        })
        .collect();
    for (qf, r) in frames.iter_mut().zip(global) {
        note_attempt(qf, &r, 0);
        let ok = r.num_inliers() >= params.min_inliers;
        log.push(attempt_record(qf, 0, AnchorSource::Global, &r, ok));
        qf.candidates = r.candidates.clone();
        if ok {
            anchor(qf, &r, AnchorSource::Global, 0, db, k, ransac.inlier_threshold);
        }
    }
    Ok(Localization { frames, log, rounds: 0 })
}

/// Up to `iterations` synchronous temporal rounds on top of
/// [`localize_global`]; stops early once a round adds no anchor.
pub fn propagate(
    loc: Localization,
    db: &SceneDatabase,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> Result<Localization, TemporalError> {
    check_inputs(&loc.frames, params, ransac)?;
    let Localization { mut frames, mut log, .. } = loc;
    let order: Vec<usize> = (0..frames.len()).collect();
    let mut rounds = 0;
    for round in 1..=params.iterations {
        if frames.iter().all(|f| f.is_anchored()) {
            break;
        }
        rounds = round;
        let results = temporal_round(&frames, &order, db, params, k, ransac, round);
        let mut grown = 0;
        for (i, r) in results {
            let qf = &mut frames[i];
            note_attempt(qf, &r, round);
            let ok = r.num_inliers() >= params.min_inliers;
            log.push(attempt_record(qf, round, AnchorSource::Temporal, &r, ok));
            if ok {
                anchor(qf, &r, AnchorSource::Temporal, round, db, k, ransac.inlier_threshold);
                grown += 1;
            }
        }
        if grown == 0 {
            break;
        }
    }
    Ok(Localization { frames, log, rounds })
}

/// [`localize_global`] followed by [`propagate`], with the final state of
/// every frame appended to the log.
pub fn localize_sequence(
    queries: Vec<QueryFrame>,
    db: &SceneDatabase,
    params: &TemporalParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> Result<Localization, TemporalError> {
    let loc = localize_global(queries, db, params, k, ransac)?;
    let mut loc = propagate(loc, db, params, k, ransac)?;
    loc.append_states();
    Ok(loc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapdb::{build_map, MapParams, PosedFrame};
    use crate::synth::{chain_scenario, exact_scenario, Scenario, SyntheticSequence, CHAIN_MAP_ADJACENCY};

    pub(crate) fn posed(seq: &SyntheticSequence) -> Vec<PosedFrame> {
        seq.frames
            .iter()
            .map(|f| PosedFrame {
                frame_id: f.frame_id,
                image_ref: String::new(),
                pose: f.pose,
                keypoints: f.keypoints.clone(),
                global: f.global.clone(),
            })
            .collect()
    }

    pub(crate) fn queries(seq: &SyntheticSequence) -> Vec<QueryFrame> {
        seq.frames
            .iter()
            .map(|f| QueryFrame::new(f.frame_id, f.keypoints.clone(), f.global.clone()))
            .collect()
    }

    fn db_of(sc: &Scenario) -> SceneDatabase {
        build_map(posed(&sc.map), &sc.k, &MapParams::default()).unwrap()
    }

    fn chain_db(sc: &Scenario) -> SceneDatabase {
        let p = MapParams {
            adjacency: CHAIN_MAP_ADJACENCY,
            ..MapParams::default()
        };
        build_map(posed(&sc.map), &sc.k, &p).unwrap()
    }

    #[test]
    fn params_validation() {
        let mut p = TemporalParams::default();
        p.validate().unwrap();
        p.window = 31;
        assert!(p.validate().is_err());
        p.window = 30;
        p.iterations = 0;
        assert!(p.validate().is_err());
        p.iterations = 1;
        p.min_inliers = 3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn map_frame_as_query_self_localizes() {
        let sc = exact_scenario(5).unwrap();
        let db = db_of(&sc);
        let mf = &db.frames()[10];
        let qf = QueryFrame::new(0, mf.keypoints.clone(), mf.global.clone());
        let r = global_match(&qf, &db, &TemporalParams::default(), &sc.k, &RansacParams::default());
        let e = r.estimate.unwrap();
        let bearing = mf.point_ids.iter().filter(|p| p.is_some()).count();
        assert_eq!(e.num_inliers, bearing);
        assert!(crate::geom::rotation_error_deg(&e.pose, &mf.pose) < 1e-6);
        assert!(crate::geom::translation_error(&e.pose, &mf.pose) < 1e-6);
    }

    #[test]
    fn empty_window_reports_no_anchors() {
        let sc = exact_scenario(5).unwrap();
        let db = db_of(&sc);
        let frames = queries(&sc.queries);
        let r = temporal_match(&frames[0], &frames, &db, &TemporalParams::default(), &sc.k, &RansacParams::default());
        assert_eq!(r.estimate, Err(TemporalError::NoAnchorsInWindow));
    }

    #[test]
    fn neighbour_of_anchor_is_localized_exactly() {
        let sc = exact_scenario(6).unwrap();
        let db = db_of(&sc);
        let mut frames = queries(&sc.queries);
        frames.truncate(3);
        let p = TemporalParams::default();
        let r = global_match(&frames[0], &db, &p, &sc.k, &RansacParams::default());
        let est = r.estimate.clone().unwrap();
        frames[0].kp_landmark = associate(&frames[0], &r, &est, &db, &sc.k, 4.0);
        frames[0].status = FrameStatus::Anchored {
            estimate: est,
            source: AnchorSource::Global,
            round: 0,
        };
        let t = temporal_match(&frames[1], &frames, &db, &p, &sc.k, &RansacParams::default());
        let e = t.estimate.unwrap();
        assert!(e.num_inliers >= p.min_inliers);
        let gt = sc.queries.frames[1].pose;
        assert!(crate::geom::translation_error(&e.pose, &gt) < 1e-6);
        assert!(crate::geom::rotation_error_deg(&e.pose, &gt) < 1e-6);
    }

    #[test]
    fn all_global_anchors_exit_early() {
        let sc = exact_scenario(7).unwrap();
        let db = db_of(&sc);
        let mut q = queries(&sc.queries);
        q.truncate(20);
        let loc = localize_sequence(q, &db, &TemporalParams::default(), &sc.k, &RansacParams::default()).unwrap();
        assert_eq!(loc.anchor_ids().len(), 20);
        assert_eq!(loc.rounds, 0);
    }

    #[test]
    fn chain_single_round_stays_within_half_window() {
        let sc = chain_scenario(1).unwrap();
        let db = chain_db(&sc);
        let p = TemporalParams {
            iterations: 1,
            ..TemporalParams::default()
        };
        let loc = localize_sequence(queries(&sc.queries), &db, &p, &sc.k, &RansacParams::default()).unwrap();
        let ids = loc.anchor_ids();
        assert!(ids.contains(&0));
        assert!(ids.len() > 1);
        assert!(ids.iter().all(|&id| id as usize <= p.window / 2), "{ids:?}");
        for f in &loc.frames {
            if let FrameStatus::Anchored { estimate, .. } = &f.status {
                assert!(estimate.num_inliers >= p.min_inliers);
            }
        }
    }

    #[test]
    fn round_is_order_independent() {
        let sc = chain_scenario(2).unwrap();
        let db = chain_db(&sc);
        let p = TemporalParams {
            iterations: 1,
            ..TemporalParams::default()
        };
        let loc = localize_sequence(queries(&sc.queries), &db, &p, &sc.k, &RansacParams::default()).unwrap();
        // rebuild the post-phase-1 state and run round 1 in two orders
        let mut frames = loc.frames.clone();
        for f in &mut frames {
            if matches!(f.status, FrameStatus::Anchored { round: 1, .. }) {
                f.status = FrameStatus::Unlocalized;
            }
        }
        let fwd: Vec<usize> = (0..frames.len()).collect();
        let rev: Vec<usize> = fwd.iter().rev().copied().collect();
        let a = temporal_round(&frames, &fwd, &db, &p, &sc.k, &RansacParams::default(), 1);
        let b = temporal_round(&frames, &rev, &db, &p, &sc.k, &RansacParams::default(), 1);
        assert_eq!(a, b);
    }
}
