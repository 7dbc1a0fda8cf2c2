use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::RefineError;
use crate::geom::{reprojection_jacobians, CameraIntrinsics, Pixel, Point3, Pose};

/// One posed observation of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub pose: Pose,
    pub pixel: Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangulation {
    pub point: Point3,
    /// Largest reprojection error over the views, in pixels; infinite when
    /// the point lies behind any camera.
    pub max_reprojection_error: f64,
    pub mean_reprojection_error: f64,
    /// Smallest and largest angle between any two viewing rays, in degrees.
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
}

/// Rays closer than this (radians) carry no depth information.
const MIN_BASELINE_ANGLE: f64 = 1e-4;

/// Multi-view linear triangulation followed by Gauss-Newton refinement of
/// the reprojection error. Gating on the returned statistics is left to the
/// caller.
pub fn triangulate(views: &[View], k: &CameraIntrinsics) -> Result<Triangulation, RefineError> {
    if views.len() < 2 {
        return Err(RefineError::Degenerate("fewer than two views".into()));
    }
    let mut ata = Matrix4::<f64>::zeros();
    for v in views {
        let b = k.unproject(&v.pixel);
        let (u, w) = (b.x / b.z, b.y / b.z);
        let r = v.pose.rotation_matrix();
        let t = v.pose.translation;
        let row = |i: usize| Vector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
        let (p1, p2, p3) = (row(0), row(1), row(2));
        for eq in [p3 * u - p1, p3 * w - p2] {
            // rows are normalized so each view weighs the same
            let n = eq.norm();
            if n > 0.0 {
                let e = eq / n;
                ata += e * e.transpose();
            }
        }
    }
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let second = eig.eigenvalues[order[1]].abs();
    let largest = eig.eigenvalues[order[3]].abs();
    if second <= 1e-14 * largest {
        return Err(RefineError::Degenerate("rank-deficient linear system".into()));
    }
    let h = eig.eigenvectors.column(order[0]).into_owned();
    if h[3].abs() < 1e-14 * h.fixed_rows::<3>(0).norm() {
        return Err(RefineError::Degenerate("point at infinity".into()));
    }
    let mut x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let max_angle = ray_angles(views, &x).1;
    if max_angle < MIN_BASELINE_ANGLE {
        return Err(RefineError::Degenerate("baseline angle too small".into()));
    }

    x = refine_point(views, k, x);
    let (min_a, max_a) = ray_angles(views, &x);
    let (max_e, mean_e) = reprojection_stats(views, k, &x);
    Ok(Triangulation {
        point: x,
        max_reprojection_error: max_e,
        mean_reprojection_error: mean_e,
        min_angle_deg: min_a.to_degrees(),
        max_angle_deg: max_a.to_degrees(),
    })
}

fn ray_angles(views: &[View], x: &Point3) -> (f64, f64) {
    let rays: Vec<Vector3<f64>> = views.iter().map(|v| x - v.pose.center()).collect();
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            let a = rays[i].cross(&rays[j]).norm().atan2(rays[i].dot(&rays[j]));
            min = min.min(a);
            max = max.max(a);
        }
    }
    (min, max)
}

pub(crate) fn reprojection_stats(views: &[View], k: &CameraIntrinsics, x: &Point3) -> (f64, f64) {
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for v in views {
        match crate::geom::project(&v.pose, k, x) {
            Ok(p) => {
                let e = (p - v.pixel).norm();
                max = max.max(e);
                sum += e;
            }
            Err(_) => return (f64::INFINITY, f64::INFINITY),
        }
    }
    (max, sum / views.len() as f64)
}

fn sq_cost(views: &[View], k: &CameraIntrinsics, x: &Point3) -> Option<f64> {
    let mut c = 0.0;
    for v in views {
        let p = crate::geom::project(&v.pose, k, x).ok()?;
        c += (p - v.pixel).norm_squared();
    }
    Some(c)
}

fn refine_point(views: &[View], k: &CameraIntrinsics, start: Point3) -> Point3 {
    let Some(mut cost) = sq_cost(views, k, &start) else {
        return start;
    };
    let mut x = start;
    let mut lambda = 1e-3;
    for _ in 0..50 {
        if cost < 1e-30 {
            break;
        }
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for v in views {
            if let Some((r, _, jp)) = reprojection_jacobians(&v.pose, k, &x, &v.pixel) {
                h += jp.transpose() * jp;
                g += jp.transpose() * r;
            }
        }
        if g.amax() < 1e-12 {
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut d = h;
            for i in 0..3 {
                d[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = d.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = x + step;
            match sq_cost(views, k, &trial) {
                Some(tc) if tc < cost => {
                    let rel = (cost - tc) / cost;
                    x = trial;
                    cost = tc;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = rel >= 1e-12;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    x
}
