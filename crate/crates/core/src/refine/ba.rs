//! Sparse bundle adjustment.
//!
//! Pose slots carry 6-dimensional increments in the [`Pose::retract`]
//! tangent space, landmark slots 3-dimensional ones. Each damped normal
//! system is reduced onto the pose blocks by eliminating the block-diagonal
//! landmark part (Schur complement), solved densely, and back-substituted.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::geom::{reprojection_jacobians, CameraIntrinsics, Pixel, Point3, Pose};
use crate::pnp::LmConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaObservation {
    pub pose: usize,
    pub point: usize,
    pub pixel: Pixel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem {
    pub k: CameraIntrinsics,
    pub poses: Vec<Pose>,
    pub pose_fixed: Vec<bool>,
    pub points: Vec<Point3>,
    pub point_fixed: Vec<bool>,
    pub observations: Vec<BaObservation>,
    pub huber_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    pub initial_rmse: f64,
    pub final_rmse: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    /// RMSE after the initial evaluation and after every accepted step.
    pub rmse_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaResult {
    pub poses: Vec<Pose>,
    pub points: Vec<Point3>,
    pub report: BaReport,
}

/// Parameter layout: variable poses first, then variable points.
struct Layout {
    pose_slot: Vec<Option<usize>>,
    point_slot: Vec<Option<usize>>,
    n_pose: usize,
    n_point: usize,
}

impl Layout {
    fn new(p: &BaProblem) -> Self {
        let mut n_pose = 0;
        let pose_slot = p
            .pose_fixed
            .iter()
            .map(|&f| {
                (!f).then(|| {
                    n_pose += 1;
                    n_pose - 1
                })
            })
            .collect();
        let mut n_point = 0;
        let point_slot = p
            .point_fixed
            .iter()
            .map(|&f| {
                (!f).then(|| {
                    n_point += 1;
                    n_point - 1
                })
            })
            .collect();
        Self { pose_slot, point_slot, n_pose, n_point }
    }

    fn dim(&self) -> usize {
        6 * self.n_pose + 3 * self.n_point
    }
}

impl BaProblem {
    pub fn validate(&self) -> Result<(), String> {
        if self.poses.len() != self.pose_fixed.len() || self.points.len() != self.point_fixed.len() {
            return Err("fixed flags do not match slot counts".into());
        }
        for o in &self.observations {
            if o.pose >= self.poses.len() || o.point >= self.points.len() {
                return Err(format!("observation references slot ({}, {}) out of range", o.pose, o.point));
            }
        }
        let fixed_points = self.point_fixed.iter().filter(|&&f| f).count();
        if !self.pose_fixed.iter().any(|&f| f) && !self.poses.is_empty() && fixed_points < 3 {
            return Err("a fixed pose or three fixed points are needed to remove the gauge freedom".into());
        }
        Ok(())
    }

    /// Number of free parameters.
    pub fn num_parameters(&self) -> usize {
        Layout::new(self).dim()
    }

    /// Applies a stacked increment (variable poses, then variable points).
    pub fn apply_update(&self, delta: &DVector<f64>) -> (Vec<Pose>, Vec<Point3>) {
        apply_delta(&Layout::new(self), &self.poses, &self.points, delta)
    }

    /// Stacked residuals (2 per observation, in order) at the given state;
    /// `None` if any observation is behind its camera.
    pub fn residuals_at(&self, poses: &[Pose], points: &[Point3]) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(2 * self.observations.len());
        for (i, o) in self.observations.iter().enumerate() {
            let pc = poses[o.pose].transform(&points[o.point]);
            if !(pc.z > 1e-9) {
                return None;
            }
            r[2 * i] = self.k.fx * pc.x / pc.z + self.k.cx - o.pixel.x;
            r[2 * i + 1] = self.k.fy * pc.y / pc.z + self.k.cy - o.pixel.y;
        }
        Some(r)
    }

    /// Dense residual Jacobian with respect to the stacked increment, at the
    /// current state. Intended for verification on small problems.
    pub fn dense_jacobian(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let lay = Layout::new(self);
        let mut j = DMatrix::zeros(2 * self.observations.len(), lay.dim());
        let mut r = DVector::zeros(2 * self.observations.len());
        let off = 6 * lay.n_pose;
        for (i, o) in self.observations.iter().enumerate() {
            let (res, jc, jp) = reprojection_jacobians(&self.poses[o.pose], &self.k, &self.points[o.point], &o.pixel)?;
            r.rows_mut(2 * i, 2).copy_from(&res);
            if let Some(s) = lay.pose_slot[o.pose] {
                j.view_mut((2 * i, 6 * s), (2, 6)).copy_from(&jc);
            }
            if let Some(s) = lay.point_slot[o.point] {
                j.view_mut((2 * i, off + 3 * s), (2, 3)).copy_from(&jp);
            }
        }
        Some((r, j))
    }
}

fn apply_delta(lay: &Layout, poses: &[Pose], points: &[Point3], delta: &DVector<f64>) -> (Vec<Pose>, Vec<Point3>) {
    assert_eq!(delta.len(), lay.dim());
    let poses = poses
        .iter()
        .zip(&lay.pose_slot)
        .map(|(p, s)| match s {
            Some(i) => p.retract(&Vector6::from_iterator(delta.rows(6 * i, 6).iter().copied())),
            None => *p,
        })
        .collect();
    let off = 6 * lay.n_pose;
    let points = points
        .iter()
        .zip(&lay.point_slot)
        .map(|(x, s)| match s {
            Some(j) => x + Vector3::from_iterator(delta.rows(off + 3 * j, 3).iter().copied()),
            None => *x,
        })
        .collect();
    (poses, points)
}

fn robust_cost(r: &DVector<f64>, delta: f64) -> f64 {
    (0..r.len() / 2)
        .map(|i| crate::pnp::huber((r[2 * i].powi(2) + r[2 * i + 1].powi(2)).sqrt(), delta))
        .sum()
}

fn rmse(r: &DVector<f64>) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        (r.norm_squared() / (r.len() / 2) as f64).sqrt()
    }
}

/// Levenberg-Marquardt on the Huber-robustified reprojection cost. A step is
/// accepted only if it lowers the robust cost without raising the RMSE, so
/// the reported RMSE sequence is non-increasing. Fixed slots are copied
/// through untouched.
pub fn bundle_adjust(p: &BaProblem, cfg: &LmConfig) -> BaResult {
    let lay = Layout::new(p);
    let mut poses = p.poses.clone();
    let mut points = p.points.clone();
    // observations behind the camera at the start are left out of the cost
    let active: Vec<BaObservation> = p
        .observations
        .iter()
        .filter(|o| poses[o.pose].transform(&points[o.point]).z > 1e-9)
        .copied()
        .collect();
    let sub = BaProblem { observations: active, ..p.clone() };
    let residuals = |poses: &[Pose], points: &[Point3]| sub.residuals_at(poses, points);

    let r0 = residuals(&poses, &points).unwrap_or_else(|| DVector::zeros(0));
    let mut cost = robust_cost(&r0, p.huber_delta);
    let mut cur_rmse = rmse(&r0);
    let mut report = BaReport {
        initial_rmse: cur_rmse,
        final_rmse: cur_rmse,
        iterations: 0,
        accepted_steps: 0,
        rmse_history: vec![cur_rmse],
    };
    if lay.dim() == 0 || sub.observations.is_empty() {
        return BaResult { poses, points, report };
    }

    // observations grouped by variable point
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); lay.n_point];
    for (i, o) in sub.observations.iter().enumerate() {
        if let Some(s) = lay.point_slot[o.point] {
            by_point[s].push(i);
        }
    }

    let mut lambda = cfg.initial_lambda;
    while report.iterations < cfg.max_iterations && cost > 1e-30 {
        // normal-equation blocks
        let np = lay.n_pose;
        let mut u = vec![Matrix6::<f64>::zeros(); np];
        let mut gc = vec![Vector6::<f64>::zeros(); np];
        let mut v = vec![Matrix3::<f64>::zeros(); lay.n_point];
        let mut gp = vec![Vector3::<f64>::zeros(); lay.n_point];
        let mut w: Vec<Option<Matrix6x3<f64>>> = vec![None; sub.observations.len()];
        for (i, o) in sub.observations.iter().enumerate() {
            let Some((r, jc, jp)) = reprojection_jacobians(&poses[o.pose], &p.k, &points[o.point], &o.pixel) else {
                continue;
            };
            let wt = crate::pnp::huber_weight(r.norm(), p.huber_delta);
            let ps = lay.pose_slot[o.pose];
            let qs = lay.point_slot[o.point];
            if let Some(a) = ps {
                u[a] += wt * jc.transpose() * jc;
                gc[a] += wt * jc.transpose() * r;
            }
            if let Some(b) = qs {
                v[b] += wt * jp.transpose() * jp;
                gp[b] += wt * jp.transpose() * r;
            }
            if ps.is_some() && qs.is_some() {
                w[i] = Some(wt * jc.transpose() * jp);
            }
        }
        let grad_inf = gc.iter().map(|g| g.amax()).chain(gp.iter().map(|g| g.amax())).fold(0.0, f64::max);
        if grad_inf < cfg.gradient_tol {
            break;
        }
        report.iterations += 1;

        let mut accepted = false;
        while lambda < 1e16 {
            let Some(delta) = solve_damped(&lay, &sub, &u, &gc, &v, &gp, &w, &by_point, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let (tp, tx) = apply_delta(&lay, &poses, &points, &delta);
            match residuals(&tp, &tx) {
                Some(tr) => {
                    let tc = robust_cost(&tr, p.huber_delta);
                    let trmse = rmse(&tr);
                    if tc < cost && trmse <= cur_rmse {
                        let rel = (cost - tc) / cost;
                        poses = tp;
                        points = tx;
                        cost = tc;
                        cur_rmse = trmse;
                        report.accepted_steps += 1;
                        report.rmse_history.push(trmse);
                        lambda = (lambda / 10.0).max(1e-12);
                        accepted = rel >= cfg.relative_decrease_tol;
                        break;
                    }
                    lambda *= 10.0;
                }
                None => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    report.final_rmse = cur_rmse;
    BaResult { poses, points, report }
}

#[allow(clippy::too_many_arguments)]
fn solve_damped(
    lay: &Layout,
    p: &BaProblem,
    u: &[Matrix6<f64>],
    gc: &[Vector6<f64>],
    v: &[Matrix3<f64>],
    gp: &[Vector3<f64>],
    w: &[Option<Matrix6x3<f64>>],
    by_point: &[Vec<usize>],
    lambda: f64,
) -> Option<DVector<f64>> {
    let np = lay.n_pose;
    let damp6 = |m: &Matrix6<f64>| {
        let mut d = *m;
        for i in 0..6 {
            d[(i, i)] += lambda * m[(i, i)].max(1e-12);
        }
        d
    };
    let mut v_inv = Vec::with_capacity(v.len());
    for m in v {
        let mut d = *m;
        for i in 0..3 {
            d[(i, i)] += lambda * m[(i, i)].max(1e-12);
        }
        v_inv.push(d.try_inverse()?);
    }

    let mut s = DMatrix::<f64>::zeros(6 * np, 6 * np);
    let mut rhs = DVector::<f64>::zeros(6 * np);
    for a in 0..np {
        s.view_mut((6 * a, 6 * a), (6, 6)).copy_from(&damp6(&u[a]));
        rhs.rows_mut(6 * a, 6).copy_from(&(-gc[a]));
    }
    for (b, obs) in by_point.iter().enumerate() {
        let vi = v_inv[b];
        let terms: Vec<(usize, Matrix6x3<f64>)> = obs
            .iter()
            .filter_map(|&i| w[i].map(|wi| (lay.pose_slot[p.observations[i].pose].unwrap(), wi)))
            .collect();
        for &(a, wa) in &terms {
            let wv = wa * vi;
            let r = wv * (-gp[b]);
            let mut seg = rhs.rows_mut(6 * a, 6);
            seg -= r;
            for &(c, wc) in &terms {
                let blk = wv * wc.transpose();
                let mut view = s.view_mut((6 * a, 6 * c), (6, 6));
                view -= blk;
            }
        }
    }
    let dc = if np > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };

    let mut delta = DVector::<f64>::zeros(lay.dim());
    delta.rows_mut(0, 6 * np).copy_from(&dc);
    let off = 6 * np;
    for (b, obs) in by_point.iter().enumerate() {
        let mut r = -gp[b];
        for &i in obs {
            if let Some(wi) = w[i] {
                let a = lay.pose_slot[p.observations[i].pose].unwrap();
                let dca = Vector6::from_iterator(dc.rows(6 * a, 6).iter().copied());
                r -= wi.transpose() * dca;
            }
        }
        delta.rows_mut(off + 3 * b, 3).copy_from(&(v_inv[b] * r));
    }
    if delta.iter().all(|x| x.is_finite()) {
        Some(delta)
    } else {
        None
    }
}
