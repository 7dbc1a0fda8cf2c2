use std::cmp::Ordering;

use nalgebra::DMatrix;

use super::{KeypointSet, Match, MatchSet};

/// Permissive ratio; RANSAC downstream removes what slips through.
pub const DEFAULT_RATIO: f64 = 0.9;

/// Mutual nearest neighbours under cosine similarity that pass the distance
/// ratio test in both directions. Symmetric: swapping the inputs swaps the
/// roles of every pair.
pub fn match_features(a: &KeypointSet, b: &KeypointSet, ratio: f64) -> MatchSet {
    assert!(ratio > 0.0 && ratio <= 1.0, "ratio must be in (0, 1]");
    if a.is_empty() || b.is_empty() {
        return MatchSet::default();
    }
    assert_eq!(a.dim(), b.dim(), "descriptor widths differ");
    let (n, m, d) = (a.len(), b.len(), a.dim());
    let da = DMatrix::from_row_slice(n, d, a.descriptors());
    let db = DMatrix::from_row_slice(m, d, b.descriptors());
    let sim = &da * db.transpose();

    let row_best = best_two(n, m, |i, j| sim[(i, j)]);
    let col_best = best_two(m, n, |j, i| sim[(i, j)]);

    let mut pairs = Vec::new();
    for (i, rb) in row_best.iter().enumerate() {
        let j = rb.best;
        if col_best[j].best != i {
            continue;
        }
        if !rb.passes(ratio) || !col_best[j].passes(ratio) {
            continue;
        }
        let s = sim[(i, j)] as f64;
        pairs.push(Match {
            a: i as u32,
            b: j as u32,
            score: ((1.0 + s) / 2.0).clamp(0.0, 1.0) as f32,
        });
    }
    pairs.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(Ordering::Equal)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    MatchSet { pairs }
}

#[derive(Debug, Clone, Copy)]
struct BestTwo {
    best: usize,
    first: f32,
    second: Option<f32>,
}

impl BestTwo {
    fn passes(&self, ratio: f64) -> bool {
        let Some(second) = self.second else {
            return true;
        };
        let d1 = (2.0 - 2.0 * self.first as f64).max(0.0).sqrt();
        let d2 = (2.0 - 2.0 * second as f64).max(0.0).sqrt();
        d1 < ratio * d2
    }
}

/// Best and runner-up similarity per row; ties go to the lower index.
fn best_two(rows: usize, cols: usize, s: impl Fn(usize, usize) -> f32) -> Vec<BestTwo> {
    (0..rows)
        .map(|i| {
            let mut best = 0usize;
            let mut first = f32::NEG_INFINITY;
            let mut second: Option<f32> = None;
            for j in 0..cols {
                let v = s(i, j);
                if v > first {
                    if first.is_finite() {
                        second = Some(first);
                    }
                    first = v;
                    best = j;
                } else if second.is_none_or(|sv| v > sv) {
                    second = Some(v);
                }
            }
            BestTwo { best, first, second }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{normalize_in_place, Keypoint};
    use crate::geom::Pixel;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_set(n: usize, seed: u64) -> KeypointSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut desc = Vec::new();
        let mut kps = Vec::new();
        for i in 0..n {
            let mut d: Vec<f32> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize_in_place(&mut d);
            desc.extend(d);
            kps.push(Keypoint { pt: Pixel::new(i as f64, 0.0), score: 1.0 });
        }
        KeypointSet::new(kps, desc, 32).unwrap()
    }

    #[test]
    fn self_match_is_identity() {
        let s = random_set(50, 1);
        let m = match_features(&s, &s, DEFAULT_RATIO);
        assert_eq!(m.len(), 50);
        for p in m.iter() {
            assert_eq!(p.a, p.b);
        }
    }

    #[test]
    fn empty_side_gives_empty_matches() {
        let a = random_set(1, 2);
        let b = KeypointSet::empty(32);
        assert!(match_features(&a, &b, 0.9).is_empty());
        assert!(match_features(&b, &a, 0.9).is_empty());
    }

    #[test]
    fn duplicated_descriptors_fail_ratio_test() {
        let a = random_set(1, 3);
        let mut desc = a.descriptor(0).to_vec();
        desc.extend_from_slice(a.descriptor(0));
        let kps = vec![Keypoint { pt: Pixel::zeros(), score: 1.0 }; 2];
        let b = KeypointSet::new(kps, desc, 32).unwrap();
        assert!(match_features(&a, &b, 0.9).is_empty());
    }

    #[test]
    fn symmetric_up_to_role_swap() {
        for seed in 0..20 {
            let a = random_set(40, 100 + seed);
            let b = random_set(35, 200 + seed);
            let ab: std::collections::BTreeSet<_> = match_features(&a, &b, 0.95).iter().map(|m| (m.a, m.b)).collect();
            let ba: std::collections::BTreeSet<_> = match_features(&b, &a, 0.95).iter().map(|m| (m.b, m.a)).collect();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn injective_and_sorted() {
        let a = random_set(60, 7);
        let b = random_set(60, 8);
        let m = match_features(&a, &b, 1.0);
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        for w in m.pairs.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for p in m.iter() {
            assert!(seen_a.insert(p.a) && seen_b.insert(p.b));
            assert!((0.0..=1.0).contains(&p.score));
        }
    }
}
