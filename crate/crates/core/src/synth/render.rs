use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GroundTruth, SequenceSpec, SynthError, World};
use crate::features::{GlobalDescriptor, Keypoint, KeypointSet, DESCRIPTOR_DIM, GLOBAL_DIM};
use crate::geom::{CameraIntrinsics, FrameId, Pixel, Pose};
use crate::raster::{convolve_separable, gaussian_kernel, GrayRaster};
use crate::seed::derive;

/// One feature-level frame plus its hidden ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFrame {
    pub frame_id: FrameId,
    pub pose: Pose,
    pub keypoints: KeypointSet,
    pub global: GlobalDescriptor,
    pub point_ids: Vec<usize>,
    pub corrupted: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSequence {
    pub frames: Vec<SyntheticFrame>,
}

impl SyntheticSequence {
    pub fn poses(&self) -> Vec<(FrameId, Pose)> {
        self.frames.iter().map(|f| (f.frame_id, f.pose)).collect()
    }

    pub fn ground_truth(&self, world: &World) -> GroundTruth {
        GroundTruth {
            poses: self.poses(),
            point_ids: self.frames.iter().map(|f| f.point_ids.clone()).collect(),
            corrupted: self.frames.iter().map(|f| f.corrupted.clone()).collect(),
            points: world.points.clone(),
        }
    }
}

/// Points in front of the camera that project inside the image, capped at
/// `max_keypoints` by a per-point priority that is the same in every frame.
fn visible_points(world: &World, spec: &SequenceSpec, pose: &Pose, k: &CameraIntrinsics) -> Vec<(usize, Pixel, f64)> {
    let mut vis: Vec<(usize, Pixel, f64)> = world
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| spec.point_filter.as_ref().is_none_or(|f| f[*i]))
        .filter_map(|(i, x)| {
            let pc = pose.transform(x);
            let px = crate::geom::project_camera(k, &pc).ok()?;
            k.contains(&px).then_some((i, px, pc.z))
        })
        .collect();
    if vis.len() > spec.max_keypoints {
        vis.sort_by_key(|&(i, _, _)| derive(&[world.texture_seed, 4, i as u64]));
        vis.truncate(spec.max_keypoints);
        vis.sort_by_key(|&(i, _, _)| i);
    }
    vis
}

fn frame_seed(spec: &SequenceSpec, index: usize, stream: u64) -> u64 {
    derive(&[spec.seed, stream, index as u64])
}

/// Feature-level rendering: each visible point becomes a keypoint at its
/// (noisy) projection whose descriptor is the point's texture vector plus
/// Gaussian noise. With probability `outlier_rate` the descriptor is taken
/// from another texture, producing a wrong match downstream. The global
/// descriptor sums per-texture vectors of everything visible, so views of
/// different copies of a duplicated cluster look alike to retrieval.
pub fn render_sequence(world: &World, spec: &SequenceSpec, k: &CameraIntrinsics) -> Result<SyntheticSequence, SynthError> {
    spec.validate(world)?;
    k.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let visible: Vec<Vec<(usize, Pixel, f64)>> = spec
        .trajectory
        .par_iter()
        .map(|pose| visible_points(world, spec, pose, k))
        .collect();
    for (i, v) in visible.iter().enumerate() {
        if v.is_empty() {
            return Err(SynthError::EmptyView {
                frame: spec.first_frame_id + i as FrameId,
            });
        }
    }

    let mut needed: Vec<u64> = visible.iter().flatten().map(|&(i, _, _)| world.texture[i]).collect();
    needed.sort_unstable();
    needed.dedup();
    let locals: HashMap<u64, Vec<f32>> = needed
        .par_iter()
        .map(|&t| (t, world.texture_descriptor(t, DESCRIPTOR_DIM)))
        .collect();
    let globals: HashMap<u64, Vec<f32>> = needed.par_iter().map(|&t| (t, world.texture_global(t, GLOBAL_DIM))).collect();

    let frames = visible
        .par_iter()
        .enumerate()
        .map(|(fi, vis)| {
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(spec, fi, 3));
            let px_noise = Normal::new(0.0, spec.keypoint_noise.max(f64::MIN_POSITIVE)).expect("finite std-dev");
            let d_sigma = spec.descriptor_noise / (DESCRIPTOR_DIM as f64).sqrt();

            let mut keypoints = Vec::with_capacity(vis.len());
            let mut descriptors = Vec::with_capacity(vis.len() * DESCRIPTOR_DIM);
            let mut point_ids = Vec::with_capacity(vis.len());
            let mut corrupted = Vec::with_capacity(vis.len());
            let mut global = vec![0.0f64; GLOBAL_DIM];
            for &(pi, clean, _) in vis {
                let own = world.texture[pi];
                let mut pt = clean;
                if spec.keypoint_noise > 0.0 {
                    pt.x += px_noise.sample(&mut rng);
                    pt.y += px_noise.sample(&mut rng);
                }
                let swap = rng.random::<f64>() < spec.outlier_rate;
                let tex = if swap {
                    loop {
                        let other = world.texture[rng.random_range(0..world.len())];
                        if other != own {
                            break other;
                        }
                    }
                } else {
                    own
                };
                let base = match locals.get(&tex) {
                    Some(d) => d.clone(),
                    None => world.texture_descriptor(tex, DESCRIPTOR_DIM),
                };
                let mut d: Vec<f64> = base
                    .iter()
                    .map(|&v| v as f64 + d_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                d.iter_mut().for_each(|x| *x /= n);
                descriptors.extend(d.iter().map(|&x| x as f32));
                for (g, &v) in global.iter_mut().zip(&globals[&own]) {
                    *g += v as f64;
                }
                keypoints.push(Keypoint { pt, score: 1.0 });
                point_ids.push(pi);
                corrupted.push(swap && tex != own);
            }
            let keypoints = KeypointSet::new(keypoints, descriptors, DESCRIPTOR_DIM).expect("consistent sizes");
            SyntheticFrame {
                frame_id: spec.first_frame_id + fi as FrameId,
                pose: spec.trajectory[fi],
                keypoints,
                global: GlobalDescriptor::from_unnormalized(global),
                point_ids,
                corrupted,
            }
        })
        .collect();
    Ok(SyntheticSequence { frames })
}

/// Image-level rendering: every visible point becomes a small two-tone
/// quadrant splat whose orientation and contrast derive from its texture,
/// painted far to near on a mid-gray background, then degraded.
pub fn render_images(world: &World, spec: &SequenceSpec, k: &CameraIntrinsics) -> Result<Vec<GrayRaster>, SynthError> {
    spec.validate(world)?;
    k.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let (w, h) = (k.width as usize, k.height as usize);
    spec.trajectory
        .par_iter()
        .enumerate()
        .map(|(fi, pose)| {
            let mut vis = visible_points(world, spec, pose, k);
            if vis.is_empty() {
                return Err(SynthError::EmptyView {
                    frame: spec.first_frame_id + fi as FrameId,
                });
            }
            vis.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            let mut img = GrayRaster::filled(w, h, 128.0);
            for &(pi, px, depth) in &vis {
                paint_splat(&mut img, world, world.texture[pi], px, (k.fx * 0.03 / depth).clamp(2.0, 7.0));
            }
            Ok(degrade(&img, spec.blur, spec.pixel_noise, frame_seed(spec, fi, 6)))
        })
        .collect()
}

fn paint_splat(img: &mut GrayRaster, world: &World, tex: u64, center: Pixel, radius: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[world.texture_seed, 5, tex]));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let a: f32 = rng.random_range(20.0..110.0);
    let b: f32 = rng.random_range(150.0..240.0);
    let (s, c) = theta.sin_cos();
    let r = radius.ceil() as isize;
    let (cx, cy) = (center.x.round() as isize, center.y.round() as isize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= img.width() as isize || y >= img.height() as isize {
                continue;
            }
            let (fx, fy) = (x as f64 - center.x, y as f64 - center.y);
            if fx * fx + fy * fy > radius * radius {
                continue;
            }
            let p = c * fx + s * fy;
            let q = -s * fx + c * fy;
            img.set(x as usize, y as usize, if p * q >= 0.0 { a } else { b });
        }
    }
}

/// Separable Gaussian blur followed by additive Gaussian noise, clamped to
/// `[0, 255]`. Both stages are skipped at zero strength.
pub fn degrade(image: &GrayRaster, blur: f64, noise: f64, seed: u64) -> GrayRaster {
    let mut out = if blur > 0.0 {
        convolve_separable(image, &gaussian_kernel(blur))
    } else {
        image.clone()
    };
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, noise).expect("finite std-dev");
        for v in out.data_mut() {
            *v = (*v as f64 + n.sample(&mut rng)).clamp(0.0, 255.0) as f32;
        }
    } else if blur > 0.0 {
        for v in out.data_mut() {
            *v = v.clamp(0.0, 255.0);
        }
    }
    out
}
