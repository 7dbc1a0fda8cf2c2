//! Rigid-body and projective geometry shared by every stage.
//!
//! Poses are world-to-camera transforms: `x_cam = R * x_world + t`. The camera
//! center is therefore `-R^T t`, and translation errors are measured between
//! centers rather than between raw `t` vectors.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{Matrix2x3, Matrix3, SMatrix, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in scene units.
pub type Point3 = Vector3<f64>;
/// An image location in pixels.
pub type Pixel = Vector2<f64>;
/// Timestamp-ordered frame index.
pub type FrameId = u32;
/// Key into a landmark table.
pub type LandmarkId = u64;

/// Jacobian of a 2D residual with respect to a 6-dim pose increment.
pub type PoseJacobian = SMatrix<f64, 2, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("point maps to infinity under the homography")]
    AtInfinity,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] IoErrorWrap),
}

/// `std::io::Error` is not `Clone`; keep only its rendering.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoErrorWrap(pub String);

impl From<std::io::Error> for GeomError {
    fn from(e: std::io::Error) -> Self {
        GeomError::Io(IoErrorWrap(e.to_string()))
    }
}

/// Rigid world-to-camera transform.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose(q=[{:.6}, {:.6}, {:.6}, {:.6}], t=[{:.6}, {:.6}, {:.6}])",
            q.w, q.i, q.j, q.k, self.translation.x, self.translation.y, self.translation.z
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, renormalizing the rotation so its norm stays within
    /// rounding of 1.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Pose of a camera placed at `center` with world-to-camera rotation `rotation`.
    pub fn from_center(rotation: UnitQuaternion<f64>, center: &Point3) -> Self {
        let translation = -(rotation * center);
        Self::new(rotation, translation)
    }

    /// Camera at `eye` looking at `target`; the camera y axis points along
    /// `-up` projected onto the image plane (image rows grow downward).
    pub fn look_at(eye: &Point3, target: &Point3, up: &Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&-up);
        if x.norm() < 1e-12 {
            x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // rows of R are the camera axes in world coordinates
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rot = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
        Self::from_center(rot, eye)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn transform(&self, x: &Point3) -> Point3 {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn center(&self) -> Point3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Applies a tangent increment `[ω, v]`: `R' = exp(ω) R`, `t' = t + v`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        Pose::new(
            UnitQuaternion::from_scaled_axis(omega) * self.rotation,
            self.translation + v,
        )
    }

    pub fn is_finite(&self) -> bool {
        let q = self.rotation.quaternion();
        q.coords.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Returns `T` with `T ∘ a = b`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    b.compose(&a.inverse())
}

/// Angle of the relative rotation between two poses, in degrees, in `[0, 180]`.
pub fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    let rel = a.rotation.inverse() * b.rotation;
    let q = rel.quaternion();
    let angle = 2.0 * q.imag().norm().atan2(q.w.abs());
    angle.to_degrees().clamp(0.0, 180.0)
}

/// Distance between camera centers.
pub fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.center() - b.center()).norm()
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Unit-depth ray `(x, y, 1)` through a pixel.
    pub fn unproject(&self, p: &Pixel) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    pub fn parse(text: &str) -> Result<Self, GeomError> {
        let line = text
            .lines()
            .enumerate()
            .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let Some((idx, line)) = line else {
            return Err(GeomError::Parse { line: 1, msg: "empty intrinsics file".into() });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(GeomError::Parse {
                line: idx + 1,
                msg: format!("expected `fx fy cx cy width height`, got {} fields", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64, GeomError> {
            fields[i].parse::<f64>().map_err(|e| GeomError::Parse {
                line: idx + 1,
                msg: format!("field {}: {e}", i + 1),
            })
        };
        let dim = |i: usize| -> Result<u32, GeomError> {
            fields[i].parse::<u32>().map_err(|e| GeomError::Parse {
                line: idx + 1,
                msg: format!("field {}: {e}", i + 1),
            })
        };
        Self::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?)
    }

    pub fn to_line(&self) -> String {
        format!("{} {} {} {} {} {}", self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

/// Pinhole projection. Fails with `BehindCamera` when the camera-frame depth
/// is not above `1e-9`.
pub fn project(pose: &Pose, k: &CameraIntrinsics, x: &Point3) -> Result<Pixel, GeomError> {
    project_camera(k, &pose.transform(x))
}

#[inline]
pub fn project_camera(k: &CameraIntrinsics, pc: &Point3) -> Result<Pixel, GeomError> {
    if !(pc.z > 1e-9) {
        return Err(GeomError::BehindCamera);
    }
    Ok(Pixel::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
}

/// Projection residual `project(pose, x) - observed` together with its
/// Jacobians with respect to the pose increment of [`Pose::retract`] and the
/// world point.
pub fn reprojection_jacobians(
    pose: &Pose,
    k: &CameraIntrinsics,
    x: &Point3,
    observed: &Pixel,
) -> Option<(Vector2<f64>, PoseJacobian, Matrix2x3<f64>)> {
    let rx = pose.rotation * x;
    let pc = rx + pose.translation;
    if !(pc.z > 1e-9) {
        return None;
    }
    let iz = 1.0 / pc.z;
    let residual = Vector2::new(k.fx * pc.x * iz + k.cx - observed.x, k.fy * pc.y * iz + k.cy - observed.y);
    let d_proj = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * pc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * pc.y * iz * iz,
    );
    // d(exp(ω) R x)/dω at 0 is -[R x]×
    let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
    let j_rot = d_proj * (-skew);
    let mut j_pose = PoseJacobian::zeros();
    j_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_rot);
    j_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
    let j_point = d_proj * pose.rotation_matrix();
    Some((residual, j_pose, j_point))
}

/// Planar projective transform, stored with `H[2][2] = 1` whenever that entry
/// is not numerically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let det = m.determinant();
        if !(det.abs() > 1e-12) {
            return Err(GeomError::SingularHomography(det));
        }
        let m = if m[(2, 2)].abs() > 1e-12 { m / m[(2, 2)] } else { m };
        if m.determinant().abs() <= 1e-12 {
            return Err(GeomError::SingularHomography(m.determinant()));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Self {
        // det is bounded away from zero by construction
        let inv = self.m.try_inverse().expect("nonsingular homography");
        Self::new(inv).expect("inverse of a nonsingular homography")
    }

    /// `self · other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeomError> {
        Self::new(self.m * other.m)
    }

    pub fn apply(&self, p: &Pixel) -> Result<Pixel, GeomError> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return Err(GeomError::AtInfinity);
        }
        Ok(Pixel::new(v.x / v.z, v.y / v.z))
    }
}

pub fn apply_homography(h: &Homography, p: &Pixel) -> Result<Pixel, GeomError> {
    h.apply(p)
}

/// Parses the pose text format: `frame_id qw qx qy qz tx ty tz` per line.
/// Blank lines and `#` comments are skipped.
pub fn read_poses<R: BufRead>(reader: R) -> Result<Vec<(FrameId, Pose)>, GeomError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_pose_line(trimmed).map_err(|msg| GeomError::Parse { line: idx + 1, msg })?);
    }
    Ok(out)
}

pub fn parse_pose_line(line: &str) -> Result<(FrameId, Pose), String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields `frame_id qw qx qy qz tx ty tz`, got {}", fields.len()));
    }
    let id = fields[0].parse::<FrameId>().map_err(|e| format!("frame id: {e}"))?;
    let mut v = [0.0f64; 7];
    for (i, f) in fields[1..].iter().enumerate() {
        v[i] = f.parse::<f64>().map_err(|e| format!("field {}: {e}", i + 2))?;
        if !v[i].is_finite() {
            return Err(format!("field {} is not finite", i + 2));
        }
    }
    let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
    if q.norm() < 1e-12 {
        return Err("zero quaternion".into());
    }
    let t = Vector3::new(v[4], v[5], v[6]);
    if (q.norm() - 1.0).abs() < 1e-12 {
        return Ok((id, Pose { rotation: UnitQuaternion::new_unchecked(q), translation: t }));
    }
    Ok((id, Pose::new(UnitQuaternion::new_unchecked(q), t)))
}

/// Formats one pose line. `f64` display is shortest-round-trip, so parsing
/// the line back reproduces the stored values exactly.
pub fn format_pose_line(id: FrameId, pose: &Pose) -> String {
    let q = pose.rotation.quaternion();
    let t = pose.translation;
    format!("{id} {} {} {} {} {} {} {}", q.w, q.i, q.j, q.k, t.x, t.y, t.z)
}

pub fn write_poses<W: Write>(mut w: W, poses: &[(FrameId, Pose)]) -> std::io::Result<()> {
    for (id, pose) in poses {
        writeln!(w, "{}", format_pose_line(*id, pose))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(0.0..3.1);
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        Pose::new(UnitQuaternion::from_scaled_axis(axis.normalize() * angle), t)
    }

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 1, height: 1 }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let px = project(&Pose::identity(), &unit_k(), &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Pixel::new(0.0, 0.0));
    }

    #[test]
    fn pinhole_hand_evaluated() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let px = project(&Pose::identity(), &k, &Point3::new(0.1, -0.2, 2.0)).unwrap();
        assert!((px - Pixel::new(55.0, 40.0)).norm() < 1e-12);
    }

    #[test]
    fn negative_depth_is_behind_camera() {
        let k = CameraIntrinsics::new(300.0, 310.0, 10.0, 20.0, 64, 48).unwrap();
        assert_eq!(
            project(&Pose::identity(), &k, &Point3::new(0.0, 0.0, -1.0)),
            Err(GeomError::BehindCamera)
        );
        assert_eq!(project(&Pose::identity(), &k, &Point3::zeros()), Err(GeomError::BehindCamera));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.5, 4, 4).is_ok());
        let k = CameraIntrinsics::parse("# camera\n500 500 320 240 640 480\n").unwrap();
        assert_eq!(CameraIntrinsics::parse(&k.to_line()).unwrap(), k);
        assert!(CameraIntrinsics::parse("500 500 320").is_err());
    }

    #[test]
    fn relative_pose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let rel = relative_pose(&p, &p);
        assert!(rotation_error_deg(&rel, &Pose::identity()) < 1e-9);
        assert!(rel.translation.norm() < 1e-9);

        let t = Vector3::new(1.0, -2.0, 0.5);
        let b = Pose::new(UnitQuaternion::identity(), t);
        let rel = relative_pose(&Pose::identity(), &b);
        assert!(rotation_error_deg(&rel, &Pose::identity()) < 1e-12);
        assert!((rel.translation - t).norm() < 1e-12);

        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let composed = relative_pose(&a, &b).compose(&a);
            assert!(rotation_error_deg(&composed, &b) < 1e-9);
            assert!((composed.translation - b.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let id = p.compose(&p.inverse());
            assert!(rotation_error_deg(&id, &Pose::identity()) < 1e-9);
            assert!(id.translation.norm() < 1e-9);
            assert!((p.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_error_examples() {
        let a = Pose::identity();
        assert_eq!(rotation_error_deg(&a, &a), 0.0);
        let b = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        );
        assert!((rotation_error_deg(&a, &b) - 90.0).abs() < 1e-12);

        // quaternion-dot oracle
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let dot = a.rotation.quaternion().coords.dot(&b.rotation.quaternion().coords).abs();
            let oracle = (2.0 * dot.min(1.0).acos()).to_degrees();
            assert!((rotation_error_deg(&a, &b) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_error_uses_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_pose(&mut rng);
        assert_eq!(translation_error(&p, &p), 0.0);
        let q = Pose::from_center(p.rotation, &(p.center() + Vector3::new(0.0, 3.0, 4.0)));
        assert!((translation_error(&p, &q) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn projection_ignores_quaternion_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = CameraIntrinsics::new(400.0, 420.0, 320.0, 240.0, 640, 480).unwrap();
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let flipped = Pose {
                rotation: UnitQuaternion::new_unchecked(-p.rotation.into_inner()),
                translation: p.translation,
            };
            let x = p.inverse().transform(&Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..5.0),
            ));
            let a = project(&p, &k, &x).unwrap();
            let b = project(&flipped, &k, &x).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Point3::new(1.0, 2.0, -3.0);
        let target = Point3::new(0.5, 0.0, 4.0);
        let pose = Pose::look_at(&eye, &target, &Vector3::new(0.0, -1.0, 0.0));
        assert!((pose.center() - eye).norm() < 1e-12);
        let pc = pose.transform(&target);
        assert!(pc.x.abs() < 1e-12 && pc.y.abs() < 1e-12 && pc.z > 0.0);
    }

    #[test]
    fn homography_examples() {
        let p = Pixel::new(3.0, 4.0);
        assert_eq!(Homography::identity().apply(&p).unwrap(), p);
        let t = Homography::translation(5.0, -2.0);
        assert_eq!(t.apply(&Pixel::zeros()).unwrap(), Pixel::new(5.0, -2.0));

        let at_inf = Homography::new(Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(at_inf.apply(&Pixel::new(0.0, 7.0)), Err(GeomError::AtInfinity));
        assert!(Homography::new(Matrix3::zeros()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let h = random_homography(&mut rng);
            let p = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let back = h.inverse().apply(&h.apply(&p).unwrap()).unwrap();
            assert!((back - p).norm() < 1e-7);
        }
    }

    #[test]
    fn homography_group_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let h1 = random_homography(&mut rng);
            let h2 = random_homography(&mut rng);
            let p = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let chained = h1.apply(&h2.apply(&p).unwrap()).unwrap();
            let product = h1.compose(&h2).unwrap().apply(&p).unwrap();
            assert!((chained - product).norm() < 1e-7);
        }
    }

    fn random_homography(rng: &mut ChaCha8Rng) -> Homography {
        let mut m = Matrix3::identity();
        for r in 0..2 {
            for c in 0..2 {
                m[(r, c)] += rng.random_range(-0.1..0.1);
            }
            m[(r, 2)] = rng.random_range(-20.0..20.0);
        }
        m[(2, 0)] = rng.random_range(-1e-4..1e-4);
        m[(2, 1)] = rng.random_range(-1e-4..1e-4);
        Homography::new(m).unwrap()
    }

    #[test]
    fn pose_file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let poses: Vec<_> = (0..20).map(|i| (i as FrameId, random_pose(&mut rng))).collect();
        let mut buf = Vec::new();
        write_poses(&mut buf, &poses).unwrap();
        let back = read_poses(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), poses.len());
        for ((ia, a), (ib, b)) in poses.iter().zip(&back) {
            assert_eq!(ia, ib);
            assert_eq!(a.translation, b.translation);
            // renormalizing an already-unit quaternion may move the last bit
            assert!(rotation_error_deg(a, b) < 1e-9);
        }
        assert!(read_poses(std::io::Cursor::new("0 1 0 0\n")).is_err());
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let mut checked = 0;
        while checked < 100 {
            let pose = random_pose(&mut rng);
            let x = pose.inverse().transform(&Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(2.0..8.0),
            ));
            let obs = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let (_, jp, jx) = reprojection_jacobians(&pose, &k, &x, &obs).unwrap();
            let h = 1e-6;
            for i in 0..6 {
                let mut d = Vector6::zeros();
                d[i] = h;
                let plus = project(&pose.retract(&d), &k, &x).unwrap();
                d[i] = -h;
                let minus = project(&pose.retract(&d), &k, &x).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let an = jp.column(i);
                assert!((fd - an).norm() <= 1e-5 * an.norm().max(1.0), "pose col {i}: {fd} vs {an}");
            }
            for i in 0..3 {
                let mut d = Vector3::zeros();
                d[i] = h;
                let plus = project(&pose, &k, &(x + d)).unwrap();
                let minus = project(&pose, &k, &(x - d)).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let an = jx.column(i);
                assert!((fd - an).norm() <= 1e-5 * an.norm().max(1.0));
            }
            checked += 1;
        }
    }
}
