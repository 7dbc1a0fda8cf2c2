//! Deterministic synthetic worlds and camera sequences with ground truth.
//!
//! A world is a base cluster of textured points, optionally duplicated
//! along x with identical textures so that copies are indistinguishable by
//! appearance. Sequences render either directly to feature sets (pixel
//! projections with texture-seeded descriptors) or to grayscale images.

mod dataset;
mod render;
mod scenario;
mod trajectory;

pub use dataset::{write_dataset, DatasetSpec, PathSpec, RenderMode, ScenarioKind};
pub use render::{degrade, render_images, render_sequence, SyntheticFrame, SyntheticSequence};
pub use scenario::{
    ambiguity_scenario, chain_scenario, exact_scenario, refinement_scenario, Scenario, CHAIN_COPIES, CHAIN_MAP_ADJACENCY,
    CHAIN_MAP_FRAMES, SCENARIO_INTRINSICS,
};
pub use trajectory::{catmull_rom, look_at_trajectory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{FrameId, Point3, Pose};
use crate::seed::derive;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("frame {frame} sees no world point")]
    EmptyView { frame: FrameId },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Points in the base cluster.
    pub base_points: usize,
    /// Cluster length along x; the cluster occupies
    /// `[-e/2, e/2] x [-e/4, e/4] x [-e/8, e/8]` around its origin.
    pub extent: f64,
    pub num_copies: usize,
    /// Distance between copy origins along x.
    pub spacing: f64,
    /// Extra points per copy with textures no other point shares, placed in
    /// the leftmost tenth of the copy. Zero gives perfectly colliding copies.
    #[serde(default)]
    pub unique_points: usize,
    pub texture_seed: u64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_copies == 0 {
            return Err(SynthError::InvalidSpec("num_copies must be at least 1".into()));
        }
        if self.base_points == 0 {
            return Err(SynthError::InvalidSpec("base cluster is empty".into()));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(SynthError::InvalidSpec("extent must be positive".into()));
        }
        if self.num_copies > 1 && !(self.spacing > 2.0 * self.extent) {
            return Err(SynthError::InvalidSpec(format!(
                "spacing {} must exceed twice the extent {} so copies stay disjoint",
                self.spacing, self.extent
            )));
        }
        Ok(())
    }
}

/// World points with their texture ids. Points sharing a texture id render
/// identical descriptors up to per-frame noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub points: Vec<Point3>,
    pub texture: Vec<u64>,
    /// Seed of the texture generator; combined with a texture id it fixes
    /// the appearance of a point.
    pub texture_seed: u64,
}

impl World {
    pub fn from_parts(points: Vec<Point3>, texture: Vec<u64>, texture_seed: u64) -> Result<Self, SynthError> {
        if points.len() != texture.len() {
            return Err(SynthError::InvalidSpec("one texture id per point required".into()));
        }
        if points.is_empty() {
            return Err(SynthError::InvalidSpec("world has no points".into()));
        }
        Ok(Self {
            points,
            texture,
            texture_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unit-norm local descriptor of texture `id`, before any frame noise.
    pub fn texture_descriptor(&self, id: u64, dim: usize) -> Vec<f32> {
        unit_gaussian(derive(&[self.texture_seed, 1, id]), dim)
    }

    /// Contribution of texture `id` to a frame's global descriptor.
    pub fn texture_global(&self, id: u64, dim: usize) -> Vec<f32> {
        unit_gaussian(derive(&[self.texture_seed, 2, id]), dim)
    }
}

fn unit_gaussian(seed: u64, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Copy `i` is the base cluster translated by `i * spacing` along x. Point
/// `j` of every copy carries texture id `j`; unique points get ids above
/// the base range.
pub fn generate_world(spec: &WorldSpec) -> Result<World, SynthError> {
    spec.validate()?;
    let e = spec.extent;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[spec.texture_seed, 0]));
    let mut sample = |x_lo: f64, x_hi: f64| {
        Point3::new(
            rng.random_range(x_lo..x_hi),
            rng.random_range(-e / 4.0..e / 4.0),
            rng.random_range(-e / 8.0..e / 8.0),
        )
    };
    let base: Vec<Point3> = (0..spec.base_points).map(|_| sample(-e / 2.0, e / 2.0)).collect();
    let unique: Vec<Vec<Point3>> = (0..spec.num_copies)
        .map(|_| (0..spec.unique_points).map(|_| sample(-e / 2.0, -e / 2.0 + e / 10.0)).collect())
        .collect();

    let mut points = Vec::new();
    let mut texture = Vec::new();
    for c in 0..spec.num_copies {
        let offset = Point3::new(c as f64 * spec.spacing, 0.0, 0.0);
        for (j, p) in base.iter().enumerate() {
            points.push(p + offset);
            texture.push(j as u64);
        }
        for (u, p) in unique[c].iter().enumerate() {
            points.push(p + offset);
            texture.push((spec.base_points + c * spec.unique_points + u) as u64);
        }
    }
    World::from_parts(points, texture, spec.texture_seed)
}

/// Per-sequence rendering controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub trajectory: Vec<Pose>,
    /// Std-dev of the Gaussian pixel noise added to keypoints.
    pub keypoint_noise: f64,
    /// Probability that a keypoint's descriptor is swapped for the texture
    /// of a different, randomly chosen world point.
    pub outlier_rate: f64,
    /// Gaussian blur std-dev for image rendering, pixels.
    pub blur: f64,
    /// Additive pixel noise for image rendering, intensity units.
    pub pixel_noise: f64,
    /// Approximate norm of the Gaussian perturbation added to every
    /// descriptor before renormalization.
    pub descriptor_noise: f64,
    pub max_keypoints: usize,
    pub seed: u64,
    pub first_frame_id: FrameId,
    /// Restricts rendering to the world points flagged `true`.
    pub point_filter: Option<Vec<bool>>,
}

impl SequenceSpec {
    pub fn new(trajectory: Vec<Pose>, seed: u64) -> Self {
        Self {
            trajectory,
            keypoint_noise: 0.0,
            outlier_rate: 0.0,
            blur: 0.0,
            pixel_noise: 0.0,
            descriptor_noise: 0.1,
            max_keypoints: crate::features::DEFAULT_MAX_KEYPOINTS,
            seed,
            first_frame_id: 0,
            point_filter: None,
        }
    }

    pub fn validate(&self, world: &World) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.trajectory.is_empty() {
            return bad("empty trajectory");
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return bad("outlier rate must lie in [0, 1)");
        }
        for v in [self.keypoint_noise, self.blur, self.pixel_noise, self.descriptor_noise] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise levels must be finite and non-negative");
            }
        }
        if self.max_keypoints == 0 {
            return bad("max_keypoints must be positive");
        }
        if let Some(f) = &self.point_filter {
            if f.len() != world.len() {
                return bad("point filter length differs from the world size");
            }
        }
        if self.trajectory.iter().any(|p| !p.is_finite()) {
            return bad("trajectory contains a non-finite pose");
        }
        Ok(())
    }
}

/// Everything needed to score a run against the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub poses: Vec<(FrameId, Pose)>,
    /// World point index behind each keypoint, per frame.
    pub point_ids: Vec<Vec<usize>>,
    /// Whether each keypoint's descriptor was swapped.
    pub corrupted: Vec<Vec<bool>>,
    pub points: Vec<Point3>,
}
