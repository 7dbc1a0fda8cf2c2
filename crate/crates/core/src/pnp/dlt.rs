use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use super::{Correspondence2D3D, PnpError};
use crate::geom::{CameraIntrinsics, Pose};

/// Linear pose from six or more correspondences.
///
/// Solves for the 3×4 matrix `[R | t]` up to scale on calibrated bearings
/// with Hartley-normalized world points, then projects the left block onto
/// the rotation group.
pub fn dlt_pose(c: &[Correspondence2D3D], k: &CameraIntrinsics) -> Result<Pose, PnpError> {
    if c.len() < 6 {
        return Err(PnpError::InsufficientCorrespondences { needed: 6, got: c.len() });
    }
    let n = c.len() as f64;
    let centroid = c.iter().fold(Vector3::zeros(), |acc, x| acc + x.point) / n;
    let spread = c.iter().map(|x| (x.point - centroid).norm()).sum::<f64>() / n;
    if !(spread > 1e-12) {
        return Err(PnpError::DegenerateConfiguration);
    }
    let s = 3f64.sqrt() / spread;
    let mut norm = Matrix4::identity() * s;
    norm[(3, 3)] = 1.0;
    norm.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-centroid * s));

    let mut a = DMatrix::<f64>::zeros(2 * c.len(), 12);
    for (i, corr) in c.iter().enumerate() {
        let b = k.unproject(&corr.pixel);
        let (u, v) = (b.x / b.z, b.y / b.z);
        let xn = (corr.point - centroid) * s;
        let xh = [xn.x, xn.y, xn.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -u * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -v * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(PnpError::DegenerateConfiguration)?;
    let sv = &svd.singular_values;
    let (min_idx, _) = sv
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    // a second near-zero singular value means the null space is not unique
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if sorted.len() < 2 || sorted[1] <= 1e-12 * sorted[sorted.len() - 1] {
        return Err(PnpError::DegenerateConfiguration);
    }
    let row: Vec<f64> = vt.row(min_idx).iter().copied().collect();
    let pn = Matrix3x4::from_row_slice(&row);
    let mut p = pn * norm;

    // the null vector's sign is arbitrary; choose the one placing points in front
    let in_front = c
        .iter()
        .filter(|x| (p.row(2) * Vector4::new(x.point.x, x.point.y, x.point.z, 1.0))[0] > 0.0)
        .count();
    if 2 * in_front < c.len() {
        p = -p;
    }

    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let msvd = m.svd(true, true);
    let (u, vt) = (
        msvd.u.ok_or(PnpError::DegenerateConfiguration)?,
        msvd.v_t.ok_or(PnpError::DegenerateConfiguration)?,
    );
    let scale = msvd.singular_values.mean();
    if !(scale > 0.0) {
        return Err(PnpError::DegenerateConfiguration);
    }
    let sign = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * vt;
    let t = p.column(3).into_owned() / scale;
    let pose = Pose::from_rotation_matrix(&r, t);
    if !pose.is_finite() {
        return Err(PnpError::DegenerateConfiguration);
    }
    Ok(pose)
}
