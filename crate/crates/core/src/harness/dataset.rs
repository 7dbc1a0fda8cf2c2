use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::PipelineError;
use crate::features::io::{import_features, EXTENSION};
use crate::features::{cap_keypoint_set, detect_and_describe, global_descriptor, GlobalDescriptor, KeypointSet};
use crate::geom::{read_poses, CameraIntrinsics, FrameId, Pose};
use crate::mapdb::PosedFrame;
use crate::raster::GrayRaster;
use crate::temporal::QueryFrame;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub map: Vec<PosedFrame>,
    pub queries: Vec<QueryFrame>,
    pub gt: Option<Vec<(FrameId, Pose)>>,
}

fn load_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::stage("load", e)
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
    CameraIntrinsics::parse(&text).map_err(|e| load_err(format!("{}: {e}", path.display())))
}

/// Frame files in `dir`, keyed by the numeric file stem, ascending.
/// Recognized extensions are `afeat` and `png`; other files are ignored.
pub fn list_frames(dir: &Path) -> Result<Vec<(FrameId, PathBuf)>, PipelineError> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| load_err(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(load_err)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext != EXTENSION && ext != "png" {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let id: FrameId = stem
            .parse()
            .map_err(|_| load_err(format!("{}: file name is not a frame id", path.display())))?;
        if let Some(prev) = out.insert(id, path.clone()) {
            return Err(load_err(format!("frame {id} appears twice: {} and {}", prev.display(), path.display())));
        }
    }
    Ok(out.into_iter().collect())
}

/// Features of one frame file: `.afeat` files are read and capped to the
/// strongest `max_keypoints`; images go through the detector.
pub fn load_frame(path: &Path, max_keypoints: usize) -> Result<(KeypointSet, GlobalDescriptor), PipelineError> {
    let with_path = |e: &dyn std::fmt::Display| load_err(format!("{}: {e}", path.display()));
    if path.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
        let (kp, g) = import_features(path).map_err(|e| with_path(&e))?;
        Ok((cap_keypoint_set(&kp, max_keypoints), g))
    } else {
        let img = GrayRaster::load(path).map_err(|e| with_path(&e))?;
        let kp = detect_and_describe(&img, max_keypoints).map_err(|e| with_path(&e))?;
        let g = global_descriptor(&img).map_err(|e| with_path(&e))?;
        Ok((kp, g))
    }
}

fn read_pose_file(path: &Path) -> Result<Vec<(FrameId, Pose)>, PipelineError> {
    let f = fs::File::open(path).map_err(|e| load_err(format!("{}: {e}", path.display())))?;
    read_poses(BufReader::new(f)).map_err(|e| load_err(format!("{}: {e}", path.display())))
}

/// Map frames listed in the pose file `poses`, each paired with its frame
/// file in `dir`.
pub fn load_map_frames(dir: &Path, poses: &Path, max_keypoints: usize) -> Result<Vec<PosedFrame>, PipelineError> {
    let poses: BTreeMap<FrameId, Pose> = read_pose_file(poses)?.into_iter().collect();
    let files = list_frames(dir)?;
    let mut listed = Vec::new();
    for (id, path) in files {
        match poses.get(&id) {
            Some(p) => listed.push((id, path, *p)),
            None => return Err(load_err(format!("map frame {id} has no pose"))),
        }
    }
    if listed.len() != poses.len() {
        return Err(load_err("the pose file lists frames without a frame file"));
    }
    listed
        .par_iter()
        .map(|(id, path, pose)| {
            let (keypoints, global) = load_frame(path, max_keypoints)?;
            let image_ref = path
                .strip_prefix(dir.parent().unwrap_or(Path::new("")))
                .unwrap_or(path)
                .to_string_lossy()
                .into_owned();
            Ok(PosedFrame {
                frame_id: *id,
                image_ref,
                pose: *pose,
                keypoints,
                global,
            })
        })
        .collect()
}

pub fn load_query_frames(dir: &Path, max_keypoints: usize) -> Result<Vec<QueryFrame>, PipelineError> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(load_err(format!("{} contains no query frames", dir.display())));
    }
    files
        .par_iter()
        .map(|(id, path)| {
            let (kp, g) = load_frame(path, max_keypoints)?;
            Ok(QueryFrame::new(*id, kp, g))
        })
        .collect()
}

/// Loads a dataset directory. `queries` overrides `root/queries`, e.g. with
/// a directory of enhanced images.
pub fn load_dataset(root: &Path, queries: Option<&Path>, max_keypoints: usize) -> Result<Dataset, PipelineError> {
    let intrinsics = load_intrinsics(&root.join("intrinsics.txt"))?;
    let map = load_map_frames(&root.join("map"), &root.join("map").join("poses.txt"), max_keypoints)?;
    let qdir = queries.map(Path::to_path_buf).unwrap_or_else(|| root.join("queries"));
    let queries = load_query_frames(&qdir, max_keypoints)?;
    let gt_path = root.join("gt").join("poses.txt");
    let gt = if gt_path.exists() { Some(read_pose_file(&gt_path)?) } else { None };
    Ok(Dataset {
        intrinsics,
        map,
        queries,
        gt,
    })
}
