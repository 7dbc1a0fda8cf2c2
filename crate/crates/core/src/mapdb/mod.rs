//! Offline scene database: posed training frames, triangulated landmarks
//! and an exact global-descriptor retrieval index.
//!
//! Each frame is matched against its next `adjacency` frames; matches are
//! merged into tracks by union-find (a track never holds two keypoints of
//! the same frame), and every track is triangulated with the known poses.
//! Tracks that mix observations of different physical points, as happens
//! on repetitive structures, are split by greedy consensus peeling before
//! gating.

mod store;

pub use store::{load_database, save_database, MANIFEST_VERSION};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{match_features, GlobalDescriptor, KeypointSet, DEFAULT_RATIO};
use crate::geom::{CameraIntrinsics, FrameId, LandmarkId, Point3, Pose};
use crate::refine::{triangulate, View};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("need at least 2 frames, got {0}")]
    InsufficientFrames(usize),
    #[error("no landmark survived triangulation and gating")]
    DegenerateGeometry,
    #[error("database is empty")]
    EmptyDatabase,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("database format: {0}")]
    Format(String),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A training frame with its known pose, before landmarks exist.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedFrame {
    pub frame_id: FrameId,
    pub image_ref: String,
    pub pose: Pose,
    pub keypoints: KeypointSet,
    pub global: GlobalDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFrame {
    pub frame_id: FrameId,
    pub image_ref: String,
    pub pose: Pose,
    pub keypoints: KeypointSet,
    /// Landmark observed by each keypoint, if any.
    pub point_ids: Vec<Option<LandmarkId>>,
    pub global: GlobalDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: LandmarkId,
    pub position: Point3,
    /// `(frame_id, keypoint index)` pairs.
    pub observations: Vec<(FrameId, u32)>,
    pub mean_reprojection_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    /// Each frame is matched with this many following frames.
    pub adjacency: usize,
    pub max_keypoints: usize,
    /// Largest reprojection error a landmark may have in any of its views.
    pub max_reprojection: f64,
    /// Smallest acceptable largest pairwise ray angle, degrees.
    pub min_angle_deg: f64,
    pub ratio: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            adjacency: 50,
            max_keypoints: crate::features::DEFAULT_MAX_KEYPOINTS,
            max_reprojection: 4.0,
            min_angle_deg: 1.5,
            ratio: DEFAULT_RATIO,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.adjacency == 0 {
            return Err(MapError::InvalidInput("adjacency must be at least 1".into()));
        }
        if self.max_keypoints == 0 {
            return Err(MapError::InvalidInput("max_keypoints must be positive".into()));
        }
        if !(self.max_reprojection > 0.0) || !(self.min_angle_deg >= 0.0) {
            return Err(MapError::InvalidInput("gates must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(MapError::InvalidInput("ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Immutable after construction; the refinement stage keeps its new
/// landmarks in a separate table.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDatabase {
    pub intrinsics: CameraIntrinsics,
    pub params: MapParams,
    frames: Vec<MapFrame>,
    landmarks: Vec<Landmark>,
    index: HashMap<FrameId, usize>,
}

impl SceneDatabase {
    /// Assembles a database from parts and checks its invariants.
    pub fn from_parts(
        intrinsics: CameraIntrinsics,
        params: MapParams,
        frames: Vec<MapFrame>,
        landmarks: Vec<Landmark>,
    ) -> Result<Self, MapError> {
        let index = frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
        let db = Self {
            intrinsics,
            params,
            frames,
            landmarks,
            index,
        };
        db.check()?;
        Ok(db)
    }

    pub fn frames(&self) -> &[MapFrame] {
        &self.frames
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<&Landmark> {
        self.landmarks.get(id as usize)
    }

    pub fn frame(&self, id: FrameId) -> Option<&MapFrame> {
        self.index.get(&id).map(|&i| &self.frames[i])
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Bidirectional consistency between frames and landmarks, id order,
    /// and strictly increasing frame ids.
    pub fn check(&self) -> Result<(), MapError> {
        let bad = |m: String| Err(MapError::Format(m));
        for w in self.frames.windows(2) {
            if w[0].frame_id >= w[1].frame_id {
                return bad(format!("frame ids not increasing at {}", w[1].frame_id));
            }
        }
        for f in &self.frames {
            if f.point_ids.len() != f.keypoints.len() {
                return bad(format!("frame {}: point_ids length differs from keypoints", f.frame_id));
            }
            for (kp, pid) in f.point_ids.iter().enumerate() {
                if let Some(id) = pid {
                    let Some(l) = self.landmark(*id) else {
                        return bad(format!("frame {} keypoint {kp} names missing landmark {id}", f.frame_id));
                    };
                    if !l.observations.contains(&(f.frame_id, kp as u32)) {
                        return bad(format!("landmark {id} lacks back-reference to frame {} keypoint {kp}", f.frame_id));
                    }
                }
            }
        }
        for (i, l) in self.landmarks.iter().enumerate() {
            if l.id != i as LandmarkId {
                return bad(format!("landmark at slot {i} has id {}", l.id));
            }
            if l.observations.len() < 2 {
                return bad(format!("landmark {} has fewer than 2 observations", l.id));
            }
            for &(fid, kp) in &l.observations {
                let mirrored = self
                    .frame(fid)
                    .and_then(|f| f.point_ids.get(kp as usize).copied().flatten());
                if mirrored != Some(l.id) {
                    return bad(format!("landmark {} observation ({fid}, {kp}) not mirrored", l.id));
                }
            }
        }
        Ok(())
    }
}

/// Top-`n_r` frame ids by descending cosine similarity, ties broken by
/// ascending frame id.
pub fn retrieve(db: &SceneDatabase, g: &GlobalDescriptor, n_r: usize) -> Result<Vec<FrameId>, MapError> {
    if db.is_empty() {
        return Err(MapError::EmptyDatabase);
    }
    if n_r == 0 {
        return Err(MapError::InvalidInput("n_r must be at least 1".into()));
    }
    let mut scored: Vec<(f64, FrameId)> = db.frames.iter().map(|f| (f.global.similarity(g), f.frame_id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(n_r).map(|(_, id)| id).collect())
}

pub(crate) struct UnionFind {
    parent: Vec<u32>,
    /// Frames present in each root's component, sorted.
    frames: Vec<Vec<u32>>,
}

impl UnionFind {
    pub(crate) fn new(node_frame: &[u32]) -> Self {
        Self {
            parent: (0..node_frame.len() as u32).collect(),
            frames: node_frame.iter().map(|&f| vec![f]).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Merges unless the two components already share a frame.
    pub(crate) fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (fa, fb) = (&self.frames[ra as usize], &self.frames[rb as usize]);
        let (mut i, mut j) = (0, 0);
        while i < fa.len() && j < fb.len() {
            match fa[i].cmp(&fb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return,
            }
        }
        let (big, small) = if fa.len() >= fb.len() { (ra, rb) } else { (rb, ra) };
        let moved = std::mem::take(&mut self.frames[small as usize]);
        let merged = merge_sorted(&self.frames[big as usize], &moved);
        self.frames[big as usize] = merged;
        self.parent[small as usize] = big;
    }
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// One observation inside a track: frame slot and keypoint index.
pub(crate) type TrackObs = (usize, u32);

/// A triangulated, gated subset of a track.
#[derive(Debug, Clone)]
pub(crate) struct TrackPoint {
    pub point: Point3,
    pub observations: Vec<TrackObs>,
    pub mean_error: f64,
}

/// Triangulation gates shared by the map builder and the refinement stage.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Gates {
    pub max_reprojection: f64,
    pub min_angle_deg: f64,
}

/// Largest gap, in track positions, between the two seed observations.
const SEED_SPAN: usize = 8;

/// Splits one track into geometrically consistent points. The whole track
/// is tried first; if it fails the gates, two-view seeds are scored by how
/// many remaining observations reproject within the gate, the best
/// consensus is re-triangulated and removed, and the process repeats.
pub(crate) fn triangulate_track(
    obs: &[TrackObs],
    pose_of: &dyn Fn(usize) -> Pose,
    pixel_of: &dyn Fn(TrackObs) -> crate::geom::Pixel,
    k: &CameraIntrinsics,
    gates: Gates,
) -> Vec<TrackPoint> {
    let views_of = |set: &[TrackObs]| -> Vec<View> {
        set.iter()
            .map(|&o| View {
                pose: pose_of(o.0),
                pixel: pixel_of(o),
            })
            .collect()
    };
    let accept = |set: &[TrackObs]| -> Option<TrackPoint> {
        let t = triangulate(&views_of(set), k).ok()?;
        (t.max_reprojection_error <= gates.max_reprojection && t.max_angle_deg >= gates.min_angle_deg).then(|| TrackPoint {
            point: t.point,
            observations: set.to_vec(),
            mean_error: t.mean_reprojection_error,
        })
    };

    if let Some(p) = accept(obs) {
        return vec![p];
    }
    let mut out = Vec::new();
    let mut remaining: Vec<TrackObs> = obs.to_vec();
    while remaining.len() >= 2 {
        let mut best: Option<Vec<usize>> = None;
        for a in 0..remaining.len() {
            for b in a + 1..remaining.len().min(a + SEED_SPAN + 1) {
                let Ok(t) = triangulate(&views_of(&[remaining[a], remaining[b]]), k) else {
                    continue;
                };
                if t.max_reprojection_error > gates.max_reprojection {
                    continue;
                }
                let support: Vec<usize> = (0..remaining.len())
                    .filter(|&i| {
                        crate::geom::project(&pose_of(remaining[i].0), k, &t.point)
                            .map(|p| (p - pixel_of(remaining[i])).norm() <= gates.max_reprojection)
                            .unwrap_or(false)
                    })
                    .collect();
                if support.len() >= 2 && best.as_ref().is_none_or(|b| support.len() > b.len()) {
                    best = Some(support);
                }
            }
        }
        let Some(support) = best else {
            break;
        };
        let set: Vec<TrackObs> = support.iter().map(|&i| remaining[i]).collect();
        if let Some(p) = accept(&set) {
            out.push(p);
        }
        let mut keep = vec![true; remaining.len()];
        for i in support {
            keep[i] = false;
        }
        let mut it = keep.iter();
        remaining.retain(|_| *it.next().unwrap());
    }
    out
}

/// Builds the database from posed frames in timestamp order. Deterministic:
/// no randomness, and all parallel stages collect in input order.
pub fn build_map(frames: Vec<PosedFrame>, k: &CameraIntrinsics, params: &MapParams) -> Result<SceneDatabase, MapError> {
    params.validate()?;
    k.validate().map_err(|e| MapError::InvalidInput(e.to_string()))?;
    if frames.len() < 2 {
        return Err(MapError::InsufficientFrames(frames.len()));
    }
    for w in frames.windows(2) {
        if w[0].frame_id >= w[1].frame_id {
            return Err(MapError::InvalidInput(format!("frame ids must increase (at {})", w[1].frame_id)));
        }
    }
    if let Some(f) = frames.iter().find(|f| !f.pose.is_finite()) {
        return Err(MapError::InvalidInput(format!("frame {} has a non-finite pose", f.frame_id)));
    }
    let dim = frames[0].keypoints.dim();
    if frames.iter().any(|f| f.keypoints.dim() != dim) {
        return Err(MapError::InvalidInput("descriptor widths differ between frames".into()));
    }
    let frames: Vec<PosedFrame> = frames.into_iter().map(|f| cap_keypoints(f, params.max_keypoints)).collect();

    let n = frames.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n.min(i + 1 + params.adjacency)).map(move |j| (i, j)))
        .collect();
    let matches: Vec<_> = pairs
        .par_iter()
        .map(|&(i, j)| match_features(&frames[i].keypoints, &frames[j].keypoints, params.ratio))
        .collect();

    let mut offset = Vec::with_capacity(n + 1);
    offset.push(0usize);
    for f in &frames {
        offset.push(offset.last().unwrap() + f.keypoints.len());
    }
    let node_frame: Vec<u32> = (0..n).flat_map(|i| std::iter::repeat_n(i as u32, frames[i].keypoints.len())).collect();

    let mut edges: Vec<(f32, u32, u32)> = Vec::new();
    for (&(i, j), ms) in pairs.iter().zip(&matches) {
        for m in ms.iter() {
            edges.push(((m.score), (offset[i] + m.a as usize) as u32, (offset[j] + m.b as usize) as u32));
        }
    }
    edges.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut uf = UnionFind::new(&node_frame);
    for &(_, a, b) in &edges {
        uf.union(a, b);
    }

    let mut groups: HashMap<u32, Vec<u32>> = HashMap::new();
    for node in 0..node_frame.len() as u32 {
        let r = uf.find(node);
        groups.entry(r).or_default().push(node);
    }
    let mut tracks: Vec<Vec<TrackObs>> = groups
        .into_values()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            g.into_iter()
                .map(|node| {
                    let f = node_frame[node as usize] as usize;
                    (f, (node as usize - offset[f]) as u32)
                })
                .collect()
        })
        .collect();
    for t in &mut tracks {
        t.sort_unstable();
    }
    tracks.sort_unstable();

    let gates = Gates {
        max_reprojection: params.max_reprojection,
        min_angle_deg: params.min_angle_deg,
    };
    let pose_of = |f: usize| frames[f].pose;
    let pixel_of = |(f, kp): TrackObs| frames[f].keypoints.point(kp as usize);
    let points: Vec<TrackPoint> = tracks
        .par_iter()
        .map(|t| triangulate_track(t, &pose_of, &pixel_of, k, gates))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if points.is_empty() {
        return Err(MapError::DegenerateGeometry);
    }

    let mut point_ids: Vec<Vec<Option<LandmarkId>>> = frames.iter().map(|f| vec![None; f.keypoints.len()]).collect();
    let landmarks: Vec<Landmark> = points
        .into_iter()
        .enumerate()
        .map(|(id, p)| {
            for &(f, kp) in &p.observations {
                point_ids[f][kp as usize] = Some(id as LandmarkId);
            }
            Landmark {
                id: id as LandmarkId,
                position: p.point,
                observations: p.observations.iter().map(|&(f, kp)| (frames[f].frame_id, kp)).collect(),
                mean_reprojection_error: p.mean_error,
            }
        })
        .collect();
    let map_frames = frames
        .into_iter()
        .zip(point_ids)
        .map(|(f, ids)| MapFrame {
            frame_id: f.frame_id,
            image_ref: f.image_ref,
            pose: f.pose,
            keypoints: f.keypoints,
            point_ids: ids,
            global: f.global,
        })
        .collect();
    SceneDatabase::from_parts(*k, *params, map_frames, landmarks)
}

/// Keeps the `max` highest-scoring keypoints, preserving their order.
pub fn cap_keypoints(f: PosedFrame, max: usize) -> PosedFrame {
    if f.keypoints.len() <= max {
        return f;
    }
    let kps = crate::features::cap_keypoint_set(&f.keypoints, max);
    PosedFrame { keypoints: kps, ..f }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, render_sequence, SequenceSpec, WorldSpec, SCENARIO_INTRINSICS};
    use nalgebra::Vector3;

    fn posed(seq: &crate::synth::SyntheticSequence) -> Vec<PosedFrame> {
        seq.frames
            .iter()
            .map(|f| PosedFrame {
                frame_id: f.frame_id,
                image_ref: format!("{:06}", f.frame_id),
                pose: f.pose,
                keypoints: f.keypoints.clone(),
                global: f.global.clone(),
            })
            .collect()
    }

    fn ten_frames() -> (crate::synth::World, crate::synth::SyntheticSequence) {
        let world = generate_world(&WorldSpec {
            base_points: 200,
            extent: 4.0,
            num_copies: 1,
            spacing: 0.0,
            unique_points: 0,
            texture_seed: 3,
        })
        .unwrap();
        let up = Vector3::new(0.0, -1.0, 0.0);
        let poses = (0..10)
            .map(|i| {
                let a = (-20.0 + 4.0 * i as f64).to_radians();
                Pose::look_at(&Point3::new(7.0 * a.sin(), 0.3, -7.0 * a.cos()), &Point3::zeros(), &up)
            })
            .collect();
        let seq = render_sequence(&world, &SequenceSpec::new(poses, 1), &SCENARIO_INTRINSICS).unwrap();
        (world, seq)
    }

    #[test]
    fn noise_free_frames_give_exact_landmarks() {
        let (world, seq) = ten_frames();
        let db = build_map(posed(&seq), &SCENARIO_INTRINSICS, &MapParams::default()).unwrap();
        assert!(db.landmarks().len() >= 190, "{}", db.landmarks().len());
        for l in db.landmarks() {
            assert!(l.mean_reprojection_error < 1e-6);
            let (fid, kp) = l.observations[0];
            let pid = seq.frames[fid as usize].point_ids[kp as usize];
            assert!((l.position - world.points[pid]).norm() < 1e-6);
        }
        db.check().unwrap();
    }

    #[test]
    fn identical_frames_are_degenerate() {
        let (_, seq) = ten_frames();
        let mut frames = posed(&seq);
        frames.truncate(1);
        let mut second = frames[0].clone();
        second.frame_id = 1;
        frames.push(second);
        assert!(matches!(
            build_map(frames, &SCENARIO_INTRINSICS, &MapParams::default()),
            Err(MapError::DegenerateGeometry)
        ));
    }

    #[test]
    fn adjacency_one_uses_consecutive_pairs_only() {
        let (_, seq) = ten_frames();
        let mut frames = posed(&seq);
        frames.truncate(3);
        let params = MapParams {
            adjacency: 1,
            ..MapParams::default()
        };
        let m01 = match_features(&frames[0].keypoints, &frames[1].keypoints, params.ratio);
        let m12 = match_features(&frames[1].keypoints, &frames[2].keypoints, params.ratio);
        // brute-force track count: chains through frame 1 plus lone pairs
        let via1: std::collections::HashSet<u32> = m12.iter().map(|m| m.a).collect();
        let chained = m01.iter().filter(|m| via1.contains(&m.b)).count();
        let tracks = m01.len() + m12.len() - chained;
        let db = build_map(frames, &SCENARIO_INTRINSICS, &params).unwrap();
        assert_eq!(db.landmarks().len(), tracks);
        assert!(db.landmarks().len() <= m01.len().max(m12.len()) + m01.len().min(m12.len()) - chained);
        for l in db.landmarks() {
            let mut ids: Vec<FrameId> = l.observations.iter().map(|o| o.0).collect();
            ids.sort_unstable();
            for w in ids.windows(2) {
                assert_eq!(w[1], w[0] + 1);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let (_, seq) = ten_frames();
        let a = build_map(posed(&seq), &SCENARIO_INTRINSICS, &MapParams::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| build_map(posed(&seq), &SCENARIO_INTRINSICS, &MapParams::default()).unwrap());
        assert_eq!(a, b);
    }

    fn random_globals(db: &mut SceneDatabase, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for f in &mut db.frames {
            f.global = GlobalDescriptor::from_unnormalized((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
    }

    #[test]
    fn retrieval_ranks_like_brute_force() {
        let (_, seq) = ten_frames();
        let mut db = build_map(posed(&seq), &SCENARIO_INTRINSICS, &MapParams::default()).unwrap();
        random_globals(&mut db, 5);
        let g = db.frames[4].global.clone();
        let r = retrieve(&db, &g, 30).unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], 4);
        let mut brute: Vec<(f64, FrameId)> = db.frames().iter().map(|f| (f.global.similarity(&g), f.frame_id)).collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        assert_eq!(r, brute.iter().map(|x| x.1).collect::<Vec<_>>());
        assert_eq!(retrieve(&db, &g, 3).unwrap(), r[..3].to_vec());
    }

    #[test]
    fn retrieval_ties_break_by_frame_id() {
        let (_, seq) = ten_frames();
        let mut db = build_map(posed(&seq), &SCENARIO_INTRINSICS, &MapParams::default()).unwrap();
        random_globals(&mut db, 6);
        let g = db.frames[7].global.clone();
        db.frames[2].global = g.clone();
        assert_eq!(retrieve(&db, &g, 2).unwrap(), vec![2, 7]);
    }

    #[test]
    fn duplicated_tracks_are_split() {
        // two copies; frames of both copies share textures, so raw tracks
        // merge observations of different points
        let world = generate_world(&WorldSpec {
            base_points: 150,
            extent: 4.0,
            num_copies: 2,
            spacing: 9.0,
            unique_points: 0,
            texture_seed: 8,
        })
        .unwrap();
        let up = Vector3::new(0.0, -1.0, 0.0);
        let mut poses = Vec::new();
        for c in 0..2 {
            for i in 0..5 {
                let x = 9.0 * c as f64 + 0.4 * i as f64 - 0.8;
                poses.push(Pose::look_at(&Point3::new(x, 0.2, -6.0), &Point3::new(9.0 * c as f64, 0.0, 0.0), &up));
            }
        }
        let seq = render_sequence(&world, &SequenceSpec::new(poses, 2), &SCENARIO_INTRINSICS).unwrap();
        let db = build_map(posed(&seq), &SCENARIO_INTRINSICS, &MapParams::default()).unwrap();
        assert!(db.landmarks().len() >= 250, "{}", db.landmarks().len());
        for l in db.landmarks() {
            let pids: Vec<usize> = l
                .observations
                .iter()
                .map(|&(f, kp)| seq.frames[f as usize].point_ids[kp as usize])
                .collect();
            assert!(pids.iter().all(|&p| p == pids[0]), "mixed track {pids:?}");
            assert!((l.position - world.points[pids[0]]).norm() < 1e-6);
        }
    }
}
