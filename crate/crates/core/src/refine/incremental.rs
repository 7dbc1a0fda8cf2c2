//! Test-time incremental reconstruction around the anchors.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bundle_adjust, BaObservation, BaProblem, BaReport};
use crate::features::{match_features, DEFAULT_RATIO};
use crate::geom::{CameraIntrinsics, FrameId, LandmarkId, Point3, Pose};
use crate::mapdb::{triangulate_track, Gates, Landmark, SceneDatabase, TrackObs, UnionFind};
use crate::pnp::{pnp_ransac, Correspondence2D3D, LmConfig, RansacParams};
use crate::seed::derive;
use crate::temporal::{associate, AnchorSource, Candidate, FrameStatus, LandmarkSource, MatchResult, QueryFrame};

/// Seed domain of resection attempts, kept apart from localization rounds.
const RESECTION_DOMAIN: u64 = 0x5245_5345;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    /// Inliers a resected frame needs to count as registered.
    pub min_inliers: usize,
    /// Frames within `window / 2` ids of each other are matched.
    pub window: usize,
    pub ratio: f64,
    pub max_reprojection: f64,
    pub min_angle_deg: f64,
    /// Upper bound on resection rounds.
    pub max_rounds: usize,
    pub huber_delta: f64,
    pub ba_iterations: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            min_inliers: 15,
            window: 30,
            ratio: DEFAULT_RATIO,
            max_reprojection: 4.0,
            min_angle_deg: 1.5,
            max_rounds: 100,
            huber_delta: 2.0,
            ba_iterations: 100,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_inliers < 4 {
            return Err("refine min_inliers must be at least 4".into());
        }
        if self.window < 2 || !self.window.is_multiple_of(2) {
            return Err("refine window must be an even number of at least 2".into());
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err("refine ratio must lie in (0, 1]".into());
        }
        if !(self.max_reprojection > 0.0) || !(self.min_angle_deg >= 0.0) || !(self.huber_delta > 0.0) {
            return Err("refine gates must be positive".into());
        }
        Ok(())
    }
}

/// How a frame's output pose was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    AnchorGlobal,
    AnchorTemporal,
    Refined,
    Unlocalized,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::AnchorGlobal => "anchor-global",
            Provenance::AnchorTemporal => "anchor-temporal",
            Provenance::Refined => "refined",
            Provenance::Unlocalized => "unlocalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::AnchorGlobal, Self::AnchorTemporal, Self::Refined, Self::Unlocalized]
            .into_iter()
            .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedFrame {
    pub frame_id: FrameId,
    pub pose: Option<Pose>,
    pub provenance: Provenance,
    pub num_inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub frames: Vec<RefinedFrame>,
    /// Landmark behind each keypoint of each frame, reference or new.
    pub kp_landmark: Vec<Vec<Option<LandmarkId>>>,
    /// Landmarks triangulated from the queries. Ids continue after the
    /// reference landmarks; observations name query frames.
    pub new_landmarks: Vec<Landmark>,
    pub report: BaReport,
    /// Resection rounds that registered at least one frame.
    pub rounds: usize,
}

impl RefineOutput {
    /// Bidirectional consistency between the new landmarks' observations
    /// and the per-keypoint associations.
    pub fn check(&self, db: &SceneDatabase) -> Result<(), String> {
        let base = db.landmarks().len() as LandmarkId;
        let slot: HashMap<FrameId, usize> = self.frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
        for (i, l) in self.new_landmarks.iter().enumerate() {
            if l.id != base + i as LandmarkId {
                return Err(format!("new landmark {} out of sequence", l.id));
            }
            if l.observations.len() < 2 {
                return Err(format!("new landmark {} has fewer than two observations", l.id));
            }
            for &(f, kp) in &l.observations {
                let back = slot.get(&f).and_then(|&s| self.kp_landmark[s].get(kp as usize)).copied().flatten();
                if back != Some(l.id) {
                    return Err(format!("landmark {} observation ({f}, {kp}) is not mirrored", l.id));
                }
            }
        }
        for (s, kpl) in self.kp_landmark.iter().enumerate() {
            if !kpl.is_empty() && self.frames[s].pose.is_none() {
                return Err(format!("unlocalized frame {} carries associations", self.frames[s].frame_id));
            }
            for (kp, id) in kpl.iter().enumerate() {
                let Some(id) = *id else { continue };
                if id < base {
                    if db.landmark(id).is_none() {
                        return Err(format!("unknown reference landmark {id}"));
                    }
                    continue;
                }
                let l = self
                    .new_landmarks
                    .get((id - base) as usize)
                    .ok_or_else(|| format!("unknown new landmark {id}"))?;
                if !l.observations.contains(&(self.frames[s].frame_id, kp as u32)) {
                    return Err(format!("association ({}, {kp}) missing from landmark {id}", self.frames[s].frame_id));
                }
            }
        }
        Ok(())
    }
}

/// Reference landmarks followed by a table of new ones.
pub struct AugmentedLandmarks<'a> {
    pub db: &'a SceneDatabase,
    pub extra: &'a [Landmark],
}

impl LandmarkSource for AugmentedLandmarks<'_> {
    fn position(&self, id: LandmarkId) -> Option<Point3> {
        let base = self.db.landmarks().len() as LandmarkId;
        if id < base {
            self.db.landmark(id).map(|l| l.position)
        } else {
            self.extra.get((id - base) as usize).map(|l| l.position)
        }
    }
}

/// Pairwise query matches, computed once per pair and kept oriented from
/// the lower to the higher frame index.
struct PairCache {
    ratio: f64,
    pairs: HashMap<(usize, usize), Vec<(u32, u32, f32)>>,
}

impl PairCache {
    fn ensure(&mut self, frames: &[QueryFrame], wanted: &[(usize, usize)]) {
        let mut missing: Vec<(usize, usize)> = wanted
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .filter(|p| !self.pairs.contains_key(p))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let ratio = self.ratio;
        let computed: Vec<_> = missing
            .par_iter()
            .map(|&(a, b)| {
                let (fa, fb) = (&frames[a].keypoints, &frames[b].keypoints);
                if fa.dim() != fb.dim() {
                    return Vec::new();
                }
                match_features(fa, fb, ratio).iter().map(|m| (m.a, m.b, m.score)).collect()
            })
            .collect();
        self.pairs.extend(missing.into_iter().zip(computed));
    }

    /// Matches as `(keypoint in a, keypoint in b, score)`.
    fn get(&self, a: usize, b: usize) -> impl Iterator<Item = (u32, u32, f32)> + '_ {
        let flip = a > b;
        self.pairs[&(a.min(b), a.max(b))]
            .iter()
            .map(move |&(x, y, s)| if flip { (y, x, s) } else { (x, y, s) })
    }
}

struct State<'a> {
    frames: &'a [QueryFrame],
    db: &'a SceneDatabase,
    k: &'a CameraIntrinsics,
    params: &'a RefineParams,
    ransac: &'a RansacParams,
    poses: Vec<Option<Pose>>,
    provenance: Vec<Provenance>,
    inliers: Vec<usize>,
    kpl: Vec<Vec<Option<LandmarkId>>>,
    extra: Vec<Landmark>,
    cache: PairCache,
}

impl State<'_> {
    fn base(&self) -> LandmarkId {
        self.db.landmarks().len() as LandmarkId
    }

    fn in_window(&self, a: usize, b: usize) -> bool {
        let d = (self.frames[a].frame_id as i64 - self.frames[b].frame_id as i64).abs();
        a != b && d <= (self.params.window / 2) as i64
    }

    fn posed_neighbours(&self, i: usize) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&j| self.poses[j].is_some() && self.in_window(i, j))
            .collect()
    }

    /// Triangulates tracks among posed frames over keypoints that have no
    /// landmark yet. Returns the number of landmarks added.
    fn triangulate_new(&mut self) -> usize {
        let posed: Vec<usize> = (0..self.frames.len()).filter(|&i| self.poses[i].is_some()).collect();
        let pairs: Vec<(usize, usize)> = posed
            .iter()
            .flat_map(|&a| posed.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .filter(|&(a, b)| self.in_window(a, b))
            .collect();
        self.cache.ensure(self.frames, &pairs);

        let mut offset = HashMap::new();
        let mut node_frame: Vec<u32> = Vec::new();
        for &f in &posed {
            offset.insert(f, node_frame.len());
            node_frame.extend(std::iter::repeat_n(f as u32, self.frames[f].keypoints.len()));
        }
        let mut edges: Vec<(f32, u32, u32)> = Vec::new();
        for &(a, b) in &pairs {
            for (ka, kb, s) in self.cache.get(a, b) {
                if self.kpl[a][ka as usize].is_none() && self.kpl[b][kb as usize].is_none() {
                    edges.push((s, (offset[&a] + ka as usize) as u32, (offset[&b] + kb as usize) as u32));
                }
            }
        }
        edges.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut uf = UnionFind::new(&node_frame);
        let mut touched = Vec::new();
        for &(_, a, b) in &edges {
            uf.union(a, b);
            touched.push(a);
            touched.push(b);
        }
        touched.sort_unstable();
        touched.dedup();
        let mut groups: HashMap<u32, Vec<u32>> = HashMap::new();
        for node in touched {
            let r = uf.find(node);
            groups.entry(r).or_default().push(node);
        }
        let mut tracks: Vec<Vec<TrackObs>> = groups
            .into_values()
            .filter(|g| g.len() >= 2)
            .map(|g| {
                g.into_iter()
                    .map(|n| {
                        let f = node_frame[n as usize] as usize;
                        (f, (n as usize - offset[&f]) as u32)
                    })
                    .collect()
            })
            .collect();
        for t in &mut tracks {
            t.sort_unstable();
        }
        tracks.sort_unstable();

        let gates = Gates {
            max_reprojection: self.params.max_reprojection,
            min_angle_deg: self.params.min_angle_deg,
        };
        let (frames, poses, k) = (self.frames, &self.poses, self.k);
        let pose_of = |f: usize| poses[f].expect("tracks only span posed frames");
        let pixel_of = |o: TrackObs| frames[o.0].keypoints.point(o.1 as usize);
        let points: Vec<_> = tracks
            .par_iter()
            .map(|t| triangulate_track(t, &pose_of, &pixel_of, k, gates))
            .collect();

        let mut added = 0;
        for p in points.into_iter().flatten() {
            let id = self.base() + self.extra.len() as LandmarkId;
            for &(f, kp) in &p.observations {
                self.kpl[f][kp as usize] = Some(id);
            }
            self.extra.push(Landmark {
                id,
                position: p.point,
                observations: Vec::new(),
                mean_reprojection_error: p.mean_error,
            });
            added += 1;
        }
        added
    }

    /// Landmarks proposed for each keypoint of frame `i`: those of matched
    /// keypoints in posed neighbours, or the frame's own map candidates for
    /// keypoints no neighbour speaks for.
    fn gather(&self, i: usize) -> Vec<Vec<Candidate>> {
        let qf = &self.frames[i];
        let mut nb: Vec<Vec<Candidate>> = vec![Vec::new(); qf.keypoints.len()];
        for j in self.posed_neighbours(i) {
            for (ki, kj, s) in self.cache.get(i, j) {
                if let Some(id) = self.kpl[j][kj as usize] {
                    let list = &mut nb[ki as usize];
                    match list.iter_mut().find(|c| c.0 == id) {
                        Some(c) => c.1 = c.1.max(s),
                        None => list.push((id, s)),
                    }
                }
            }
        }
        for (kp, list) in nb.iter_mut().enumerate() {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            if list.is_empty() {
                *list = qf.candidates.get(kp).cloned().unwrap_or_default();
            }
        }
        nb
    }

    fn resect(&self, i: usize, round: usize) -> Option<(Pose, usize, Vec<Option<LandmarkId>>)> {
        let qf = &self.frames[i];
        let src = AugmentedLandmarks {
            db: self.db,
            extra: &self.extra,
        };
        let candidates = self.gather(i);
        let mut correspondences = Vec::new();
        let mut keypoint_of = Vec::new();
        for (kp, list) in candidates.iter().enumerate() {
            let Some(&(id, score)) = list.first() else { continue };
            let Some(point) = src.position(id) else { continue };
            correspondences.push(Correspondence2D3D {
                pixel: qf.keypoints.point(kp),
                point,
                landmark_id: Some(id),
                score,
            });
            keypoint_of.push(kp as u32);
        }
        if correspondences.len() < self.params.min_inliers {
            return None;
        }
        let rp = RansacParams {
            seed: derive(&[self.ransac.seed, RESECTION_DOMAIN, qf.frame_id as u64, round as u64]),
            ..*self.ransac
        };
        let estimate = pnp_ransac(&correspondences, self.k, &rp).ok()?;
        if estimate.num_inliers < self.params.min_inliers {
            return None;
        }
        let result = MatchResult {
            correspondences,
            keypoint_of,
            candidates,
            estimate: Ok(estimate.clone()),
        };
        let kpl = associate(qf, &result, &estimate, &src, self.k, self.ransac.inlier_threshold);
        Some((estimate.pose, estimate.num_inliers, kpl))
    }

    /// One synchronous resection round; returns the number of frames
    /// registered.
    fn resect_round(&mut self, round: usize) -> usize {
        let open: Vec<usize> = (0..self.frames.len()).filter(|&i| self.poses[i].is_none()).collect();
        let pairs: Vec<(usize, usize)> = open
            .iter()
            .flat_map(|&i| self.posed_neighbours(i).into_iter().map(move |j| (i, j)))
            .collect();
        self.cache.ensure(self.frames, &pairs);
        let this = &*self;
        let results: Vec<_> = open.par_iter().map(|&i| (i, this.resect(i, round))).collect();
        let mut registered = 0;
        for (i, r) in results {
            if let Some((pose, n, kpl)) = r {
                self.poses[i] = Some(pose);
                self.provenance[i] = Provenance::Refined;
                self.inliers[i] = n;
                self.kpl[i] = kpl;
                registered += 1;
            }
        }
        registered
    }

    fn bundle_adjust(&mut self) -> BaReport {
        let base = self.base();
        let mut pose_slot: HashMap<usize, usize> = HashMap::new();
        let mut point_slot: HashMap<LandmarkId, usize> = HashMap::new();
        let mut poses = Vec::new();
        let mut pose_fixed = Vec::new();
        let mut points = Vec::new();
        let mut point_fixed = Vec::new();
        let mut observations = Vec::new();
        let src = AugmentedLandmarks {
            db: self.db,
            extra: &self.extra,
        };
        for (f, pose) in self.poses.iter().enumerate() {
            let Some(pose) = pose else { continue };
            let variable_pose = self.provenance[f] == Provenance::Refined;
            for (kp, id) in self.kpl[f].iter().enumerate() {
                let Some(id) = *id else { continue };
                let variable_point = id >= base;
                if !variable_pose && !variable_point {
                    continue;
                }
                let ps = *pose_slot.entry(f).or_insert_with(|| {
                    poses.push(*pose);
                    pose_fixed.push(!variable_pose);
                    poses.len() - 1
                });
                let pt = *point_slot.entry(id).or_insert_with(|| {
                    points.push(src.position(id).expect("associated landmarks exist"));
                    point_fixed.push(!variable_point);
                    points.len() - 1
                });
                observations.push(BaObservation {
                    pose: ps,
                    point: pt,
                    pixel: self.frames[f].keypoints.point(kp),
                });
            }
        }
        let problem = BaProblem {
            k: *self.k,
            poses,
            pose_fixed,
            points,
            point_fixed,
            observations,
            huber_delta: self.params.huber_delta,
        };
        let cfg = LmConfig {
            huber_delta: self.params.huber_delta,
            max_iterations: self.params.ba_iterations,
            ..LmConfig::default()
        };
        let result = bundle_adjust(&problem, &cfg);
        for (&f, &s) in &pose_slot {
            if !problem.pose_fixed[s] {
                self.poses[f] = Some(result.poses[s]);
            }
        }
        for (&id, &s) in &point_slot {
            if id >= base {
                self.extra[(id - base) as usize].position = result.points[s];
            }
        }
        result.report
    }
}

/// Registers the frames that localization left unanchored: new landmarks
/// are triangulated among posed frames, unposed frames are resected
/// against reference and new landmarks, and the two alternate until no
/// frame is added. A bundle adjustment with anchors and reference
/// landmarks held fixed then polishes the registered frames and the new
/// landmarks.
pub fn refine_all(
    frames: &[QueryFrame],
    db: &SceneDatabase,
    params: &RefineParams,
    k: &CameraIntrinsics,
    ransac: &RansacParams,
) -> Result<RefineOutput, String> {
    params.validate()?;
    ransac.validate()?;
    let n = frames.len();
    let mut st = State {
        frames,
        db,
        k,
        params,
        ransac,
        poses: vec![None; n],
        provenance: vec![Provenance::Unlocalized; n],
        inliers: vec![0; n],
        kpl: frames.iter().map(|f| vec![None; f.keypoints.len()]).collect(),
        extra: Vec::new(),
        cache: PairCache {
            ratio: params.ratio,
            pairs: HashMap::new(),
        },
    };
    for (i, f) in frames.iter().enumerate() {
        if let FrameStatus::Anchored { estimate, source, .. } = &f.status {
            st.poses[i] = Some(estimate.pose);
            st.inliers[i] = estimate.num_inliers;
            st.provenance[i] = match source {
                AnchorSource::Global => Provenance::AnchorGlobal,
                AnchorSource::Temporal => Provenance::AnchorTemporal,
            };
            if f.kp_landmark.len() == f.keypoints.len() {
                st.kpl[i] = f.kp_landmark.clone();
            }
        }
    }

    let mut rounds = 0;
    if st.poses.iter().any(|p| p.is_some()) {
        st.triangulate_new();
        for round in 1..=params.max_rounds {
            if st.poses.iter().all(|p| p.is_some()) {
                break;
            }
            if st.resect_round(round) == 0 {
                break;
            }
            rounds = round;
            st.triangulate_new();
        }
    }
    let report = st.bundle_adjust();

    let mut new_landmarks = st.extra;
    let base = db.landmarks().len() as LandmarkId;
    for (f, kpl) in st.kpl.iter_mut().enumerate() {
        if st.poses[f].is_none() {
            kpl.clear();
            continue;
        }
        for (kp, id) in kpl.iter().enumerate() {
            if let Some(id) = *id {
                if id >= base {
                    new_landmarks[(id - base) as usize].observations.push((frames[f].frame_id, kp as u32));
                }
            }
        }
    }
    let out_frames = frames
        .iter()
        .enumerate()
        .map(|(i, f)| RefinedFrame {
            frame_id: f.frame_id,
            pose: st.poses[i],
            provenance: st.provenance[i],
            num_inliers: st.inliers[i],
        })
        .collect();
    Ok(RefineOutput {
        frames: out_frames,
        kp_landmark: st.kpl,
        new_landmarks,
        report,
        rounds,
    })
}
