use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Landmark, MapError, MapFrame, MapParams, SceneDatabase};
use crate::features::io::{export_features, import_features, EXTENSION};
use crate::geom::{format_pose_line, parse_pose_line, CameraIntrinsics, LandmarkId, Point3};

pub const MANIFEST_VERSION: u32 = 1;
const LANDMARK_MAGIC: &[u8; 4] = b"ALMK";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    intrinsics: CameraIntrinsics,
    params: MapParams,
    frames: usize,
    landmarks: usize,
}

fn feature_path(dir: &Path, frame_id: u32) -> std::path::PathBuf {
    dir.join("features").join(format!("{frame_id:06}.{EXTENSION}"))
}

/// Writes `frames.tsv`, `landmarks.bin`, `features/<id>.afeat` and
/// `manifest.json` under `dir`.
pub fn save_database(db: &SceneDatabase, dir: &Path) -> Result<(), MapError> {
    fs::create_dir_all(dir.join("features"))?;
    let mut tsv = BufWriter::new(fs::File::create(dir.join("frames.tsv"))?);
    writeln!(tsv, "# frame_id\timage\tqw qx qy qz tx ty tz")?;
    for f in db.frames() {
        if f.image_ref.contains(['\t', '\n']) {
            return Err(MapError::InvalidInput(format!("image path of frame {} contains a tab or newline", f.frame_id)));
        }
        let line = format_pose_line(f.frame_id, &f.pose);
        let pose = line.split_once(' ').map(|x| x.1).unwrap_or_default();
        writeln!(tsv, "{}\t{}\t{pose}", f.frame_id, f.image_ref)?;
        export_features(&feature_path(dir, f.frame_id), &f.keypoints, &f.global)?;
    }
    tsv.flush()?;

    let mut bin = BufWriter::new(fs::File::create(dir.join("landmarks.bin"))?);
    bin.write_all(LANDMARK_MAGIC)?;
    bin.write_all(&MANIFEST_VERSION.to_le_bytes())?;
    bin.write_all(&(db.landmarks().len() as u64).to_le_bytes())?;
    for l in db.landmarks() {
        bin.write_all(&l.id.to_le_bytes())?;
        for v in [l.position.x, l.position.y, l.position.z, l.mean_reprojection_error] {
            bin.write_all(&v.to_le_bytes())?;
        }
        bin.write_all(&(l.observations.len() as u32).to_le_bytes())?;
        for &(f, kp) in &l.observations {
            bin.write_all(&f.to_le_bytes())?;
            bin.write_all(&kp.to_le_bytes())?;
        }
    }
    bin.flush()?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        intrinsics: db.intrinsics,
        params: db.params,
        frames: db.frames().len(),
        landmarks: db.landmarks().len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| MapError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], MapError> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| MapError::Format(format!("landmarks.bin truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32, MapError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, MapError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, MapError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

fn read_landmarks(buf: &[u8]) -> Result<Vec<Landmark>, MapError> {
    let mut c = Cursor { buf, pos: 0 };
    if &c.take::<4>()? != LANDMARK_MAGIC {
        return Err(MapError::Format("landmarks.bin has a bad magic number".into()));
    }
    let version = c.u32()?;
    if version != MANIFEST_VERSION {
        return Err(MapError::Format(format!("unsupported landmark file version {version}")));
    }
    let n = c.u64()?;
    let mut out = Vec::with_capacity(n.min(1 << 24) as usize);
    for _ in 0..n {
        let id: LandmarkId = c.u64()?;
        let position = Point3::new(c.f64()?, c.f64()?, c.f64()?);
        let mean_reprojection_error = c.f64()?;
        let m = c.u32()?;
        let mut observations = Vec::with_capacity(m.min(1 << 16) as usize);
        for _ in 0..m {
            observations.push((c.u32()?, c.u32()?));
        }
        out.push(Landmark {
            id,
            position,
            observations,
            mean_reprojection_error,
        });
    }
    if c.pos != buf.len() {
        return Err(MapError::Format("trailing bytes in landmarks.bin".into()));
    }
    Ok(out)
}

/// Reads a database written by [`save_database`] and re-checks every
/// invariant.
pub fn load_database(dir: &Path) -> Result<SceneDatabase, MapError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
        .map_err(|e| MapError::Format(format!("manifest.json: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(MapError::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    let landmarks = read_landmarks(&fs::read(dir.join("landmarks.bin"))?)?;

    let mut frames = Vec::new();
    let tsv = BufReader::new(fs::File::open(dir.join("frames.tsv"))?);
    for (i, line) in tsv.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(image), Some(pose)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(MapError::Format(format!("frames.tsv line {}: expected 3 tab-separated fields", i + 1)));
        };
        let (frame_id, pose) = parse_pose_line(&format!("{id} {pose}"))
            .map_err(|e| MapError::Format(format!("frames.tsv line {}: {e}", i + 1)))?;
        let (keypoints, global) = import_features(&feature_path(dir, frame_id))?;
        frames.push(MapFrame {
            frame_id,
            image_ref: image.to_string(),
            pose,
            point_ids: vec![None; keypoints.len()],
            keypoints,
            global,
        });
    }
    let slot: std::collections::HashMap<u32, usize> = frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
    for l in &landmarks {
        for &(f, kp) in &l.observations {
            let entry = slot
                .get(&f)
                .and_then(|&s| frames[s].point_ids.get_mut(kp as usize))
                .ok_or_else(|| MapError::Format(format!("landmark {} observes unknown ({f}, {kp})", l.id)))?;
            *entry = Some(l.id);
        }
    }
    if frames.len() != manifest.frames || landmarks.len() != manifest.landmarks {
        return Err(MapError::Format("manifest counts disagree with the stored data".into()));
    }
    SceneDatabase::from_parts(manifest.intrinsics, manifest.params, frames, landmarks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapdb::{build_map, PosedFrame};
    use crate::synth::{exact_scenario, SCENARIO_INTRINSICS};

    #[test]
    fn round_trip_preserves_structure() {
        let sc = exact_scenario(2).unwrap();
        let frames: Vec<PosedFrame> = sc.map.frames[..8]
            .iter()
            .map(|f| PosedFrame {
                frame_id: f.frame_id,
                image_ref: format!("map/{:06}.afeat", f.frame_id),
                pose: f.pose,
                keypoints: f.keypoints.clone(),
                global: f.global.clone(),
            })
            .collect();
        let db = build_map(frames, &SCENARIO_INTRINSICS, &Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_database(&db, dir.path()).unwrap();
        let back = load_database(dir.path()).unwrap();
        assert_eq!(back.landmarks(), db.landmarks());
        assert_eq!(back.frames().len(), db.frames().len());
        for (a, b) in back.frames().iter().zip(db.frames()) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.point_ids, b.point_ids);
            assert_eq!(a.global, b.global);
            assert_eq!(a.image_ref, b.image_ref);
        }
    }

    #[test]
    fn truncated_landmarks_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(LANDMARK_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&3u64.to_le_bytes());
        assert!(matches!(read_landmarks(&buf), Err(MapError::Format(_))));
    }
}
