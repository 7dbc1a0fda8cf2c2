use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dlt_pose, p3p, refine_pose_lm, triangle_area, Correspondence2D3D, PnpError};
use crate::geom::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Reprojection error bound for an inlier, in pixels.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 4.0,
            max_iterations: 10_000,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.inlier_threshold > 0.0) {
            return Err(format!("inlier threshold must be positive, got {}", self.inlier_threshold));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub num_inliers: usize,
    /// Mean reprojection error over the inliers, in pixels.
    pub mean_reprojection_error: f64,
}

impl PoseEstimate {
    pub fn inliers<'a>(&'a self, c: &'a [Correspondence2D3D]) -> impl Iterator<Item = &'a Correspondence2D3D> + 'a {
        c.iter().zip(&self.inlier_mask).filter(|(_, &m)| m).map(|(c, _)| c)
    }
}

/// Inlier mask, count and mean inlier error of `pose` at `threshold`.
pub fn score_pose(pose: &Pose, c: &[Correspondence2D3D], k: &CameraIntrinsics, threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(c.len());
    let mut count = 0;
    let mut sum = 0.0;
    for corr in c {
        let pc = pose.transform(&corr.point);
        let ok = if pc.z > 1e-9 {
            let dx = k.fx * pc.x / pc.z + k.cx - corr.pixel.x;
            let dy = k.fy * pc.y / pc.z + k.cy - corr.pixel.y;
            let e = (dx * dx + dy * dy).sqrt();
            if e <= threshold {
                sum += e;
                true
            } else {
                false
            }
        } else {
            false
        };
        count += ok as usize;
        mask.push(ok);
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    (mask, count, mean)
}

fn count_inliers(pose: &Pose, c: &[Correspondence2D3D], k: &CameraIntrinsics, t2: f64) -> usize {
    c.iter()
        .filter(|corr| {
            let pc = pose.transform(&corr.point);
            if !(pc.z > 1e-9) {
                return false;
            }
            let dx = k.fx * pc.x / pc.z + k.cx - corr.pixel.x;
            let dy = k.fy * pc.y / pc.z + k.cy - corr.pixel.y;
            dx * dx + dy * dy <= t2
        })
        .count()
}

fn adaptive_bound(inliers: usize, n: usize, sample: i32, confidence: f64, cap: usize) -> usize {
    let w = inliers as f64 / n as f64;
    let p_good = w.powi(sample);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return cap;
    }
    let bound = ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil();
    if bound.is_finite() && bound >= 0.0 {
        (bound as usize).clamp(1, cap)
    } else {
        cap
    }
}

struct Search {
    best: Option<Pose>,
    best_count: usize,
}

/// Hypothesize-and-verify over minimal samples of size `sample`.
fn search(
    c: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    params: &RansacParams,
    rng: &mut ChaCha8Rng,
    sample: usize,
    mut solve: impl FnMut(&[Correspondence2D3D]) -> Option<Vec<Pose>>,
) -> Search {
    let t2 = params.inlier_threshold * params.inlier_threshold;
    let mut out = Search { best: None, best_count: 0 };
    let mut bound = params.max_iterations;
    let mut iter = 0usize;
    let mut skips = 0usize;
    let mut buf = Vec::with_capacity(sample);
    while iter < bound {
        buf.clear();
        buf.extend(index::sample(rng, c.len(), sample).into_iter().map(|i| c[i]));
        if sample == 3 && triangle_area(&buf[0].point, &buf[1].point, &buf[2].point) < 1e-10 {
            skips += 1;
            if skips > 10 {
                iter += 1;
            }
            continue;
        }
        skips = 0;
        iter += 1;
        let Some(poses) = solve(&buf) else { continue };
        for pose in poses {
            let count = count_inliers(&pose, c, k, t2);
            if count > out.best_count {
                out.best_count = count;
                out.best = Some(pose);
                bound = adaptive_bound(count, c.len(), sample as i32, params.confidence, params.max_iterations);
            }
        }
    }
    out
}

/// Inliers whose residual is consistent with the bulk: a stray outlier that
/// happens to land inside the inlier threshold would otherwise bias the
/// polish. The cut is three robust standard deviations of the inlier
/// residuals, never below a rounding floor.
fn polish_support(pose: &Pose, c: &[Correspondence2D3D], k: &CameraIntrinsics, mask: &[bool]) -> Vec<Correspondence2D3D> {
    let mut res: Vec<(f64, Correspondence2D3D)> = c
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(x, _)| {
            let pc = pose.transform(&x.point);
            let dx = k.fx * pc.x / pc.z + k.cx - x.pixel.x;
            let dy = k.fy * pc.y / pc.z + k.cy - x.pixel.y;
            ((dx * dx + dy * dy).sqrt(), *x)
        })
        .collect();
    if res.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = res.iter().map(|r| r.0).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let cut = (3.0 * 1.4826 * median).max(1e-6);
    let kept: Vec<_> = res.iter().filter(|r| r.0 <= cut).map(|r| r.1).collect();
    if kept.len() >= 4 {
        kept
    } else {
        res.drain(..).map(|r| r.1).collect()
    }
}

/// Robust absolute pose: P3P hypotheses with an adaptive iteration bound,
/// falling back to six-point DLT samples if no minimal sample ever yields a
/// pose. The winner is polished on its inliers and the mask recomputed.
pub fn pnp_ransac(c: &[Correspondence2D3D], k: &CameraIntrinsics, params: &RansacParams) -> Result<PoseEstimate, PnpError> {
    if c.len() < 4 {
        return Err(PnpError::InsufficientCorrespondences { needed: 4, got: c.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut found = search(c, k, params, &mut rng, 3, |s| p3p(s, k).ok());
    if found.best.is_none() && c.len() >= 6 {
        found = search(c, k, params, &mut rng, 6, |s| dlt_pose(s, k).ok().map(|p| vec![p]));
    }
    let Some(mut pose) = found.best else {
        return Err(PnpError::NoConsensus { best_inliers: 0 });
    };

    let thr = params.inlier_threshold;
    let (mut mask, mut count, _) = score_pose(&pose, c, k, thr);
    for _ in 0..4 {
        if count < 4 {
            break;
        }
        let support = polish_support(&pose, c, k, &mask);
        let polished = refine_pose_lm(&pose, &support, k);
        let (m2, n2, _) = score_pose(&polished, c, k, thr);
        if n2 < count {
            break;
        }
        let converged = m2 == mask && polish_support(&polished, c, k, &m2).len() == support.len();
        pose = polished;
        mask = m2;
        count = n2;
        if converged {
            break;
        }
    }
    let (mask, count, mean) = score_pose(&pose, c, k, thr);
    if count < 4 {
        return Err(PnpError::NoConsensus { best_inliers: count });
    }
    Ok(PoseEstimate {
        pose,
        inlier_mask: mask,
        num_inliers: count,
        mean_reprojection_error: mean,
    })
}
