use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::Correspondence2D3D;
use crate::geom::{reprojection_jacobians, CameraIntrinsics, Pose};

/// Stopping rules and robust scale for the pose polish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub relative_decrease_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            huber_delta: 2.0,
            max_iterations: 100,
            gradient_tol: 1e-10,
            relative_decrease_tol: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
}

/// Robust cost of one residual norm `e`: quadratic inside `delta`, linear
/// beyond, continuous with continuous slope.
#[inline]
pub(crate) fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        e * e
    } else {
        2.0 * delta * e - delta * delta
    }
}

/// IRLS weight matching [`huber`].
#[inline]
pub(crate) fn huber_weight(e: f64, delta: f64) -> f64 {
    if e <= delta {
        1.0
    } else {
        delta / e
    }
}

pub fn refine_pose_lm(pose: &Pose, inliers: &[Correspondence2D3D], k: &CameraIntrinsics) -> Pose {
    refine_pose_lm_with(pose, inliers, k, &LmConfig::default()).0
}

/// Levenberg-Marquardt polish of `pose` on Huber-robustified reprojection
/// error. Correspondences behind the camera at the starting pose are
/// ignored; steps that push any remaining point behind the camera are
/// rejected. The returned cost never exceeds the starting cost.
pub fn refine_pose_lm_with(
    pose: &Pose,
    inliers: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    cfg: &LmConfig,
) -> (Pose, LmReport) {
    let active: Vec<&Correspondence2D3D> = inliers
        .iter()
        .filter(|c| pose.transform(&c.point).z > 1e-9)
        .collect();
    let delta = cfg.huber_delta;
    let cost_of = |p: &Pose| -> Option<f64> {
        let mut total = 0.0;
        for c in &active {
            let pc = p.transform(&c.point);
            if !(pc.z > 1e-9) {
                return None;
            }
            let px = k.fx * pc.x / pc.z + k.cx - c.pixel.x;
            let py = k.fy * pc.y / pc.z + k.cy - c.pixel.y;
            total += huber((px * px + py * py).sqrt(), delta);
        }
        Some(total)
    };

    let mut current = *pose;
    let mut cost = cost_of(&current).unwrap_or(0.0);
    let mut report = LmReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        accepted_steps: 0,
    };
    if active.len() < 3 {
        return (current, report);
    }
    let mut lambda = cfg.initial_lambda;

    while report.iterations < cfg.max_iterations && cost > 1e-30 {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in &active {
            let Some((r, j, _)) = reprojection_jacobians(&current, k, &c.point, &c.pixel) else {
                continue;
            };
            let w = huber_weight(r.norm(), delta);
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        if g.amax() < cfg.gradient_tol {
            break;
        }
        report.iterations += 1;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = current.retract(&step);
            match cost_of(&trial) {
                Some(tc) if tc < cost => {
                    let decrease = (cost - tc) / cost;
                    current = trial;
                    cost = tc;
                    report.accepted_steps += 1;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if decrease < cfg.relative_decrease_tol {
                        report.final_cost = cost;
                        return (current, report);
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    report.final_cost = cost;
    (current, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project, rotation_error_deg, translation_error, Point3};
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scene(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> (Pose, Vec<Correspondence2D3D>, CameraIntrinsics) {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let gt = Pose::new(
            UnitQuaternion::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.0..3.0)),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        );
        let inv = gt.inverse();
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let c = (0..n)
            .map(|_| {
                let pc = Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..10.0));
                let x = inv.transform(&pc);
                let mut px = project(&gt, &k, &x).unwrap();
                if noise > 0.0 {
                    px.x += normal.sample(rng);
                    px.y += normal.sample(rng);
                }
                Correspondence2D3D::new(px, x)
            })
            .collect();
        (gt, c, k)
    }

    #[test]
    fn perturbed_pose_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (gt, c, k) = scene(&mut rng, 50, 0.0);
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let mut d = Vector6::zeros();
            d.fixed_rows_mut::<3>(0).copy_from(&(axis * 1f64.to_radians()));
            d.fixed_rows_mut::<3>(3).copy_from(&(dir * 0.05));
            let start = gt.retract(&d);
            let (est, rep) = refine_pose_lm_with(&start, &c, &k, &LmConfig::default());
            assert!(rotation_error_deg(&est, &gt) < 1e-8, "{}", rotation_error_deg(&est, &gt));
            assert!(translation_error(&est, &gt) < 1e-8);
            assert!(rep.final_cost <= rep.initial_cost);
        }
    }

    #[test]
    fn optimal_pose_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (gt, c, k) = scene(&mut rng, 40, 0.0);
        let est = refine_pose_lm(&gt, &c, &k);
        assert!(rotation_error_deg(&est, &gt) < 1e-10);
        assert!(translation_error(&est, &gt) < 1e-10);
    }

    #[test]
    fn noisy_correspondences_have_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (gt, c, k) = scene(&mut rng, 200, 1.0);
            let est = refine_pose_lm(&gt, &c, &k);
            let mean = c.iter().map(|x| (project(&est, &k, &x.point).unwrap() - x.pixel).norm()).sum::<f64>() / c.len() as f64;
            assert!(mean < 1.5, "mean residual {mean}");
        }
    }

    #[test]
    fn huber_is_continuous() {
        let d = 2.0;
        assert!((huber(d, d) - huber(d + 1e-12, d)).abs() < 1e-10);
        assert_eq!(huber_weight(1.0, d), 1.0);
        assert_eq!(huber_weight(4.0, d), 0.5);
    }
}
