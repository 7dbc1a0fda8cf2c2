use super::{FeatureError, GlobalDescriptor};
use crate::raster::GrayRaster;

/// 16x16 tiny image.
pub const GLOBAL_DIM: usize = 256;

const TINY: usize = 16;
const ORIENT_BINS: usize = 8;

/// Mean-subtracted 16x16 tiny image whose four quadrants are weighted by the
/// spread of the matching image quadrant's gradient-orientation histogram,
/// then L2-normalized.
///
/// Orientations are folded modulo π so the weights are unchanged under
/// intensity inversion; an inverted image therefore yields the negated
/// descriptor.
pub fn global_descriptor(image: &GrayRaster) -> Result<GlobalDescriptor, FeatureError> {
    let (w, h) = (image.width(), image.height());
    if w < 32 || h < 32 {
        return Err(FeatureError::EmptyImage { width: w, height: h });
    }

    let mut tiny = vec![0.0f64; TINY * TINY];
    for ty in 0..TINY {
        let (y0, y1) = (ty * h / TINY, (ty + 1) * h / TINY);
        for tx in 0..TINY {
            let (x0, x1) = (tx * w / TINY, (tx + 1) * w / TINY);
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += image.get(x, y) as f64;
                }
            }
            tiny[ty * TINY + tx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    let mean = tiny.iter().sum::<f64>() / tiny.len() as f64;
    for v in tiny.iter_mut() {
        *v -= mean;
    }

    let weights = quadrant_weights(image);
    for ty in 0..TINY {
        for tx in 0..TINY {
            let q = (ty / (TINY / 2)) * 2 + tx / (TINY / 2);
            tiny[ty * TINY + tx] *= weights[q];
        }
    }
    Ok(GlobalDescriptor::from_unnormalized(tiny))
}

/// Per-quadrant weight in `[0.5, 1]`: 1 for isotropic gradient orientation
/// distributions, 0.5 when a single orientation dominates.
fn quadrant_weights(image: &GrayRaster) -> [f64; 4] {
    let (w, h) = (image.width(), image.height());
    let mut hist = [[0.0f64; ORIENT_BINS]; 4];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (image.get_clamped(xi + 1, yi) - image.get_clamped(xi - 1, yi)) as f64;
            let gy = 0.5 * (image.get_clamped(xi, yi + 1) - image.get_clamped(xi, yi - 1)) as f64;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let bin = ((angle / std::f64::consts::PI * ORIENT_BINS as f64) as usize).min(ORIENT_BINS - 1);
            let q = (2 * y / h) * 2 + 2 * x / w;
            hist[q][bin] += mag;
        }
    }
    let mut out = [1.0; 4];
    for (q, bins) in hist.iter().enumerate() {
        let total: f64 = bins.iter().sum();
        if total > 0.0 {
            let peak = bins.iter().fold(0.0f64, |m, &b| m.max(b));
            out[q] = 0.5 + 0.5 * (1.0 - peak / total);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(seed: u64) -> GrayRaster {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f32> = (0..64 * 48).map(|_| rng.random_range(0.0..255.0f32).round()).collect();
        GrayRaster::from_vec(64, 48, vals)
    }

    #[test]
    fn unit_norm_and_self_similarity() {
        let img = noise(1);
        let g = global_descriptor(&img).unwrap();
        assert_eq!(g.dim(), GLOBAL_DIM);
        assert!((g.similarity(&g) - 1.0).abs() < 1e-6);
        assert_eq!(g, global_descriptor(&img).unwrap());
    }

    #[test]
    fn negative_image_negates_tiny_part() {
        let img = noise(2);
        let neg = img.map(|v| 255.0 - v);
        let a = global_descriptor(&img).unwrap();
        let b = global_descriptor(&neg).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x + y).abs() < 1e-6);
        }
        assert!(a.similarity(&b) < 0.0);
    }

    #[test]
    fn constant_image_maps_to_uniform_vector() {
        let g = global_descriptor(&GrayRaster::filled(40, 40, 7.0)).unwrap();
        assert!((g.similarity(&g) - 1.0).abs() < 1e-6);
        assert!(global_descriptor(&GrayRaster::new(20, 40)).is_err());
    }
}
