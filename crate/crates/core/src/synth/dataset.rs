use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{build, forward_path};
use super::{
    ambiguity_scenario, catmull_rom, chain_scenario, exact_scenario, generate_world, look_at_trajectory,
    refinement_scenario, render_images, Scenario, SequenceSpec, SynthError, SyntheticSequence, WorldSpec,
};
use crate::features::io::{export_features, EXTENSION};
use crate::geom::{write_poses, CameraIntrinsics, Point3};
use crate::seed::derive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// `.afeat` files straight from projected points.
    #[default]
    Features,
    /// Rendered grayscale PNG images.
    Images,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Exact,
    Ambiguity,
    Chain,
    Refinement,
    Custom,
}

/// A camera path and its rendering noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    /// Catmull-Rom control points for the camera centre.
    pub eyes: Vec<[f64; 3]>,
    /// Look-at control points; when absent the camera looks along +z.
    #[serde(default)]
    pub targets: Option<Vec<[f64; 3]>>,
    pub frames: usize,
    #[serde(default)]
    pub keypoint_noise: f64,
    #[serde(default)]
    pub outlier_rate: f64,
    #[serde(default)]
    pub blur: f64,
    #[serde(default)]
    pub pixel_noise: f64,
    #[serde(default = "default_descriptor_noise")]
    pub descriptor_noise: f64,
    #[serde(default = "default_max_keypoints")]
    pub max_keypoints: usize,
}

fn default_descriptor_noise() -> f64 {
    0.1
}

fn default_max_keypoints() -> usize {
    crate::features::DEFAULT_MAX_KEYPOINTS
}

/// Input of the `synth` command: a named scenario, or a custom world with
/// map and query paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RenderMode,
    #[serde(default)]
    pub world: Option<WorldSpec>,
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    #[serde(default)]
    pub map: Option<PathSpec>,
    #[serde(default)]
    pub queries: Option<PathSpec>,
}

fn to_points(v: &[[f64; 3]]) -> Vec<Point3> {
    v.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()
}

fn sequence_spec(p: &PathSpec, seed: u64) -> Result<SequenceSpec, SynthError> {
    if p.eyes.is_empty() || p.frames == 0 {
        return Err(SynthError::InvalidSpec("a path needs control points and frames".into()));
    }
    let trajectory = match &p.targets {
        None => forward_path(&to_points(&p.eyes), p.frames),
        Some(t) => {
            let eyes = catmull_rom(&to_points(&p.eyes), p.frames);
            let targets = catmull_rom(&to_points(t), p.frames);
            if targets.len() != eyes.len() {
                return Err(SynthError::InvalidSpec("targets need at least one control point".into()));
            }
            look_at_trajectory(&eyes, &targets, &nalgebra::Vector3::new(0.0, -1.0, 0.0))
        }
    };
    let mut s = SequenceSpec::new(trajectory, seed);
    s.keypoint_noise = p.keypoint_noise;
    s.outlier_rate = p.outlier_rate;
    s.blur = p.blur;
    s.pixel_noise = p.pixel_noise;
    s.descriptor_noise = p.descriptor_noise;
    s.max_keypoints = p.max_keypoints;
    Ok(s)
}

impl DatasetSpec {
    pub fn build(&self) -> Result<Scenario, SynthError> {
        let custom_fields = self.world.is_some() || self.intrinsics.is_some() || self.map.is_some() || self.queries.is_some();
        match self.scenario {
            ScenarioKind::Custom => {
                let (Some(world), Some(map), Some(queries)) = (&self.world, &self.map, &self.queries) else {
                    return Err(SynthError::InvalidSpec("custom scenario needs world, map and queries".into()));
                };
                let k = self.intrinsics.unwrap_or(super::SCENARIO_INTRINSICS);
                k.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
                let world = generate_world(world)?;
                build(
                    world,
                    k,
                    sequence_spec(map, derive(&[self.seed, 1]))?,
                    sequence_spec(queries, derive(&[self.seed, 2]))?,
                )
            }
            _ if custom_fields => Err(SynthError::InvalidSpec(
                "world, intrinsics, map and queries are only valid for the custom scenario".into(),
            )),
            ScenarioKind::Exact => exact_scenario(self.seed),
            ScenarioKind::Ambiguity => ambiguity_scenario(self.seed),
            ScenarioKind::Chain => chain_scenario(self.seed),
            ScenarioKind::Refinement => refinement_scenario(self.seed),
        }
    }
}

fn frame_name(id: u32) -> String {
    format!("{id:06}")
}

fn write_frames(dir: &Path, seq: &SyntheticSequence, images: Option<&[crate::raster::GrayRaster]>) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    for (i, f) in seq.frames.iter().enumerate() {
        match images {
            Some(imgs) => imgs[i].save_png(&dir.join(format!("{}.png", frame_name(f.frame_id))))?,
            None => export_features(
                &dir.join(format!("{}.{EXTENSION}", frame_name(f.frame_id))),
                &f.keypoints,
                &f.global,
            )?,
        }
    }
    Ok(())
}

/// Writes the directory layout the `map`, `localize` and `run` commands
/// consume:
///
/// ```text
/// intrinsics.txt
/// map/poses.txt        map/<id>.afeat | map/<id>.png
/// queries/<id>.afeat | queries/<id>.png
/// gt/poses.txt         query ground-truth poses
/// gt/points.txt        index x y z texture
/// gt/observations.tsv  frame_id keypoint point corrupted (feature mode)
/// ```
pub fn write_dataset(dir: &Path, scenario: &Scenario, mode: RenderMode) -> Result<(), SynthError> {
    fs::create_dir_all(dir.join("gt"))?;
    fs::write(dir.join("intrinsics.txt"), format!("{}\n", scenario.k.to_line()))?;

    let (map_imgs, query_imgs) = match mode {
        RenderMode::Features => (None, None),
        RenderMode::Images => (
            Some(render_images(&scenario.world, &scenario.map_spec, &scenario.k)?),
            Some(render_images(&scenario.world, &scenario.query_spec, &scenario.k)?),
        ),
    };
    write_frames(&dir.join("map"), &scenario.map, map_imgs.as_deref())?;
    write_frames(&dir.join("queries"), &scenario.queries, query_imgs.as_deref())?;
    write_poses(BufWriter::new(fs::File::create(dir.join("map").join("poses.txt"))?), &scenario.map.poses())?;
    write_poses(BufWriter::new(fs::File::create(dir.join("gt").join("poses.txt"))?), &scenario.queries.poses())?;

    let mut pts = BufWriter::new(fs::File::create(dir.join("gt").join("points.txt"))?);
    for (i, (p, t)) in scenario.world.points.iter().zip(&scenario.world.texture).enumerate() {
        writeln!(pts, "{i} {:.17e} {:.17e} {:.17e} {t}", p.x, p.y, p.z)?;
    }
    pts.flush()?;
    if mode == RenderMode::Features {
        let mut obs = BufWriter::new(fs::File::create(dir.join("gt").join("observations.tsv"))?);
        writeln!(obs, "frame_id\tkeypoint\tpoint\tcorrupted")?;
        for f in &scenario.queries.frames {
            for (i, (&p, &c)) in f.point_ids.iter().zip(&f.corrupted).enumerate() {
                writeln!(obs, "{}\t{i}\t{p}\t{}", f.frame_id, c as u8)?;
            }
        }
        obs.flush()?;
    }
    Ok(())
}
