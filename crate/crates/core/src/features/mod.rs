//! Local and global image features.
//!
//! The built-in backend is classical: Harris corners with adaptive non-maximal
//! suppression and 128-d gradient-orientation patch descriptors, plus a 256-d
//! tiny-image global descriptor. Externally computed features of any
//! descriptor width can be imported through the `.afeat` file format.

mod detect;
mod global;
pub mod io;
mod matching;

pub use detect::{detect_and_describe, DetectorParams, DESCRIPTOR_DIM};
pub use global::{global_descriptor, GLOBAL_DIM};
pub use matching::{match_features, DEFAULT_RATIO};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pixel;

/// Default cap on keypoints per image.
pub const DEFAULT_MAX_KEYPOINTS: usize = 512;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image of {width}x{height} is below the 32x32 minimum")]
    EmptyImage { width: usize, height: usize },
    #[error("malformed feature file at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("descriptor width {found} does not match expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid keypoint set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub pt: Pixel,
    /// Detector confidence in `[0, 1]`.
    pub score: f32,
}

/// Keypoints with their unit-norm descriptors, stored row-major.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointSet {
    keypoints: Vec<Keypoint>,
    descriptors: Vec<f32>,
    dim: usize,
}

impl KeypointSet {
    pub fn new(keypoints: Vec<Keypoint>, descriptors: Vec<f32>, dim: usize) -> Result<Self, FeatureError> {
        if keypoints.len() * dim != descriptors.len() {
            return Err(FeatureError::Invalid(format!(
                "{} keypoints with descriptor width {dim} need {} values, got {}",
                keypoints.len(),
                keypoints.len() * dim,
                descriptors.len()
            )));
        }
        if !descriptors.iter().all(|v| v.is_finite())
            || !keypoints.iter().all(|k| k.pt.x.is_finite() && k.pt.y.is_finite() && k.score.is_finite())
        {
            return Err(FeatureError::Invalid("non-finite value".into()));
        }
        Ok(Self { keypoints, descriptors, dim })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            keypoints: Vec::new(),
            descriptors: Vec::new(),
            dim,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    #[inline]
    pub fn point(&self, i: usize) -> Pixel {
        self.keypoints[i].pt
    }

    #[inline]
    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    /// Checks the unit-norm and in-bounds invariants.
    pub fn check(&self, width: u32, height: u32) -> Result<(), FeatureError> {
        for (i, kp) in self.keypoints.iter().enumerate() {
            if kp.pt.x < 0.0 || kp.pt.y < 0.0 || kp.pt.x >= width as f64 || kp.pt.y >= height as f64 {
                return Err(FeatureError::Invalid(format!("keypoint {i} at {:?} outside image", kp.pt)));
            }
            let n: f64 = self.descriptor(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(FeatureError::Invalid(format!("descriptor {i} has norm {n}")));
            }
        }
        Ok(())
    }
}

/// One correspondence between keypoint `a` of the first set and `b` of the
/// second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a: u32,
    pub b: u32,
    /// Cosine similarity mapped to `[0, 1]`.
    pub score: f32,
}

/// One-to-one matches sorted by descending score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Match> {
        self.pairs.iter()
    }
}

/// Unit-norm image descriptor used for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDescriptor {
    values: Vec<f32>,
}

impl GlobalDescriptor {
    /// Normalizes `values`; an all-zero input becomes the uniform unit vector.
    pub fn from_unnormalized(values: Vec<f64>) -> Self {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if n > 1e-300 {
            values.iter().map(|v| (v / n) as f32).collect()
        } else {
            let u = 1.0 / (values.len().max(1) as f64).sqrt();
            vec![u as f32; values.len()]
        };
        Self { values }
    }

    /// Wraps already-normalized values without touching them.
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Cosine similarity, accumulated in `f64` in index order.
    pub fn similarity(&self, other: &GlobalDescriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

/// Keeps the `max` highest-scoring keypoints (earlier index wins ties) in
/// their original order.
pub fn cap_keypoint_set(set: &KeypointSet, max: usize) -> KeypointSet {
    if set.len() <= max {
        return set.clone();
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.keypoints[b].score.total_cmp(&set.keypoints[a].score).then(a.cmp(&b)));
    order.truncate(max);
    order.sort_unstable();
    let keypoints = order.iter().map(|&i| set.keypoints[i]).collect();
    let descriptors = order.iter().flat_map(|&i| set.descriptor(i).iter().copied()).collect();
    KeypointSet {
        keypoints,
        descriptors,
        dim: set.dim,
    }
}

/// L2-normalizes a descriptor in place; returns `false` when it is all zero.
pub(crate) fn normalize_in_place(v: &mut [f32]) -> bool {
    let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if n < 1e-12 {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}
