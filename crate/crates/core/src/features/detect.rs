use std::cmp::Ordering;

use super::{normalize_in_place, FeatureError, Keypoint, KeypointSet};
use crate::geom::Pixel;
use crate::raster::{convolve_separable, gaussian_kernel, GrayRaster};

/// 4x4 cells x 8 orientation bins.
pub const DESCRIPTOR_DIM: usize = 128;

const PATCH: usize = 16;
const CELL: usize = 4;
const BINS: usize = 8;
// patch half-width plus one pixel for the central-difference gradient
const MARGIN: usize = PATCH / 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Harris sensitivity `k` in `det - k tr²`.
    pub harris_k: f64,
    /// Std-dev of the structure-tensor window, pixels.
    pub window_sigma: f64,
    /// Responses below this fraction of the image maximum are discarded.
    pub relative_threshold: f64,
    /// ANMS robustness factor.
    pub anms_robustness: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            window_sigma: 1.5,
            relative_threshold: 0.01,
            anms_robustness: 0.9,
        }
    }
}

/// Harris corners, adaptive non-maximal suppression down to `max_keypoints`,
/// and 16x16 gradient-orientation patch descriptors. Deterministic.
pub fn detect_and_describe(image: &GrayRaster, max_keypoints: usize) -> Result<KeypointSet, FeatureError> {
    detect_with(image, max_keypoints, &DetectorParams::default())
}

pub(crate) fn detect_with(
    image: &GrayRaster,
    max_keypoints: usize,
    params: &DetectorParams,
) -> Result<KeypointSet, FeatureError> {
    let (w, h) = (image.width(), image.height());
    if w < 32 || h < 32 {
        return Err(FeatureError::EmptyImage { width: w, height: h });
    }
    assert!(max_keypoints >= 1, "max_keypoints must be at least 1");

    let response = harris_response(image, params);
    let max_r = response.data().iter().fold(0.0f32, |m, &v| m.max(v)) as f64;
    let threshold = (params.relative_threshold * max_r).max(1e-6);

    let mut candidates = local_maxima(&response, threshold);
    candidates.sort_by(|a, b| b.response.partial_cmp(&a.response).unwrap_or(Ordering::Equal).then(a.index.cmp(&b.index)));
    // ANMS is quadratic; the weakest tail never survives anyway
    candidates.truncate((max_keypoints * 8).max(1024));
    let selected = anms(&candidates, max_keypoints, params.anms_robustness);

    let mut keypoints = Vec::with_capacity(selected.len());
    let mut descriptors = Vec::with_capacity(selected.len() * DESCRIPTOR_DIM);
    for c in selected {
        let Some(desc) = describe_patch(image, c.x, c.y) else {
            continue;
        };
        let (fx, fy) = refine_corner(image, c.x, c.y).unwrap_or_else(|| {
            let (dx, dy) = subpixel_offset(&response, c.x, c.y);
            (c.x as f64 + dx, c.y as f64 + dy)
        });
        // f32-representable coordinates survive the feature file unchanged
        let px = (fx as f32) as f64;
        let py = (fy as f32) as f64;
        keypoints.push(Keypoint {
            pt: Pixel::new(px, py),
            score: (c.response as f64 / max_r).clamp(0.0, 1.0) as f32,
        });
        descriptors.extend_from_slice(&desc);
    }
    KeypointSet::new(keypoints, descriptors, DESCRIPTOR_DIM)
}

fn gradients(image: &GrayRaster) -> (GrayRaster, GrayRaster) {
    let (w, h) = (image.width(), image.height());
    let mut gx = GrayRaster::new(w, h);
    let mut gy = GrayRaster::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| image.get_clamped(x + dx, y + dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.set(x as usize, y as usize, sx / 8.0);
            gy.set(x as usize, y as usize, sy / 8.0);
        }
    }
    (gx, gy)
}

fn harris_response(image: &GrayRaster, params: &DetectorParams) -> GrayRaster {
    let (gx, gy) = gradients(image);
    let kernel = gaussian_kernel(params.window_sigma);
    let xx = convolve_separable(&gx.map(|v| v * v), &kernel);
    let yy = convolve_separable(&gy.map(|v| v * v), &kernel);
    let xy = {
        let prod: Vec<f32> = gx.data().iter().zip(gy.data()).map(|(a, b)| a * b).collect();
        convolve_separable(&GrayRaster::from_vec(gx.width(), gx.height(), prod), &kernel)
    };
    let mut r = GrayRaster::new(image.width(), image.height());
    for i in 0..r.data().len() {
        let (a, b, c) = (xx.data()[i] as f64, yy.data()[i] as f64, xy.data()[i] as f64);
        let tr = a + b;
        r.data_mut()[i] = (a * b - c * c - params.harris_k * tr * tr) as f32;
    }
    r
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    x: usize,
    y: usize,
    index: usize,
    response: f32,
}

/// Strict 3x3 maxima; among equal neighbors the lowest linear index wins.
fn local_maxima(r: &GrayRaster, threshold: f64) -> Vec<Candidate> {
    let (w, h) = (r.width(), r.height());
    let mut out = Vec::new();
    if w <= 2 * MARGIN || h <= 2 * MARGIN {
        return out;
    }
    for y in MARGIN..h - MARGIN {
        for x in MARGIN..w - MARGIN {
            let v = r.get(x, y);
            if (v as f64) <= threshold {
                continue;
            }
            let idx = y * w + x;
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                    let n = r.get(nx, ny);
                    if n > v || (n == v && ny * w + nx < idx) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push(Candidate { x, y, index: idx, response: v });
            }
        }
    }
    out
}

/// Adaptive non-maximal suppression over candidates sorted by descending
/// response: each keeps the distance to the nearest sufficiently stronger
/// candidate, and the `n` largest radii win.
fn anms(sorted: &[Candidate], n: usize, robustness: f64) -> Vec<Candidate> {
    if sorted.len() <= n {
        return sorted.to_vec();
    }
    let mut radii: Vec<(f64, usize)> = Vec::with_capacity(sorted.len());
    for (i, c) in sorted.iter().enumerate() {
        let mut r2 = f64::INFINITY;
        for s in &sorted[..i] {
            if (c.response as f64) < robustness * s.response as f64 {
                let dx = c.x as f64 - s.x as f64;
                let dy = c.y as f64 - s.y as f64;
                r2 = r2.min(dx * dx + dy * dy);
            }
        }
        radii.push((r2, i));
    }
    radii.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = radii.iter().take(n).map(|&(_, i)| i).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| sorted[i]).collect()
}

/// Quadratic peak interpolation along each axis, clamped to half a pixel.
fn subpixel_offset(r: &GrayRaster, x: usize, y: usize) -> (f64, f64) {
    let fit = |m: f64, c: f64, p: f64| {
        let denom = 2.0 * (2.0 * c - m - p);
        if denom.abs() < 1e-12 {
            0.0
        } else {
            ((p - m) / denom).clamp(-0.5, 0.5)
        }
    };
    let c = r.get(x, y) as f64;
    let dx = fit(r.get(x - 1, y) as f64, c, r.get(x + 1, y) as f64);
    let dy = fit(r.get(x, y - 1) as f64, c, r.get(x, y + 1) as f64);
    (dx, dy)
}

/// Gradient-orthogonality refinement: the corner is the point `q` minimizing
/// `Σ (gᵢ · (q - pᵢ))²` over a window, i.e. where the edge lines through the
/// window meet. Returns `None` when the system is ill-conditioned or the
/// refined point drifts more than two pixels.
fn refine_corner(image: &GrayRaster, x: usize, y: usize) -> Option<(f64, f64)> {
    const RADIUS: isize = 4;
    let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for dy in -RADIUS..=RADIUS {
        for dx in -RADIUS..=RADIUS {
            let (px, py) = (x as isize + dx, y as isize + dy);
            let gx = 0.5 * (image.get_clamped(px + 1, py) - image.get_clamped(px - 1, py)) as f64;
            let gy = 0.5 * (image.get_clamped(px, py + 1) - image.get_clamped(px, py - 1)) as f64;
            let (pxf, pyf) = (px as f64, py as f64);
            a00 += gx * gx;
            a01 += gx * gy;
            a11 += gy * gy;
            b0 += gx * gx * pxf + gx * gy * pyf;
            b1 += gx * gy * pxf + gy * gy * pyf;
        }
    }
    let det = a00 * a11 - a01 * a01;
    let trace = a00 + a11;
    if !(trace > 0.0) || det < 1e-6 * trace * trace {
        return None;
    }
    let qx = (a11 * b0 - a01 * b1) / det;
    let qy = (a00 * b1 - a01 * b0) / det;
    let shift = ((qx - x as f64).powi(2) + (qy - y as f64).powi(2)).sqrt();
    (shift <= 2.0).then_some((qx, qy))
}

fn describe_patch(image: &GrayRaster, cx: usize, cy: usize) -> Option<[f32; DESCRIPTOR_DIM]> {
    let mut hist = [0.0f64; DESCRIPTOR_DIM];
    let half = (PATCH / 2) as isize;
    let sigma2 = 2.0 * (PATCH as f64 / 2.0).powi(2);
    for py in 0..PATCH {
        for px in 0..PATCH {
            let x = cx as isize - half + px as isize;
            let y = cy as isize - half + py as isize;
            let gx = 0.5 * (image.get_clamped(x + 1, y) - image.get_clamped(x - 1, y)) as f64;
            let gy = 0.5 * (image.get_clamped(x, y + 1) - image.get_clamped(x, y - 1)) as f64;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let ox = px as f64 + 0.5 - half as f64;
            let oy = py as f64 + 0.5 - half as f64;
            let weight = mag * (-(ox * ox + oy * oy) / sigma2).exp();
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let pos = angle / std::f64::consts::TAU * BINS as f64;
            let b0 = pos.floor() as usize % BINS;
            let frac = pos - pos.floor();
            let b1 = (b0 + 1) % BINS;
            let cell = (py / CELL) * (PATCH / CELL) + px / CELL;
            hist[cell * BINS + b0] += weight * (1.0 - frac);
            hist[cell * BINS + b1] += weight * frac;
        }
    }
    let mut desc = [0.0f32; DESCRIPTOR_DIM];
    for (d, h) in desc.iter_mut().zip(hist.iter()) {
        *d = *h as f32;
    }
    if !normalize_in_place(&mut desc) {
        return None;
    }
    // clamp dominant bins, then renormalize
    for d in desc.iter_mut() {
        *d = d.min(0.2);
    }
    normalize_in_place(&mut desc).then_some(desc)
}
