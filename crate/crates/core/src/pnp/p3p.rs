//! Three-point absolute pose via Grunert's distance equations.
//!
//! With depths `s₂ = u s₁`, `s₃ = v s₁` the law of cosines on the three
//! point pairs gives two conics in `(u, v)`. Eliminating `u` yields a quartic
//! in `v`; its coefficients are assembled here by polynomial arithmetic
//! rather than transcribed, so the construction can be audited line by line.
//! Each real root is lifted to depths, polished by Gauss-Newton on the three
//! distance equations, and turned into a pose by absolute orientation.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{triangle_area, Correspondence2D3D, PnpError};
use crate::geom::{rotation_error_deg, CameraIntrinsics, Point3, Pose};

/// All real solutions of the three-point pose problem.
pub fn p3p(c: &[Correspondence2D3D], k: &CameraIntrinsics) -> Result<Vec<Pose>, PnpError> {
    if c.len() != 3 {
        return Err(PnpError::InsufficientCorrespondences { needed: 3, got: c.len() });
    }
    let x = [c[0].point, c[1].point, c[2].point];
    if triangle_area(&x[0], &x[1], &x[2]) <= 1e-12 {
        return Err(PnpError::DegenerateConfiguration);
    }
    let j = [
        k.unproject(&c[0].pixel).normalize(),
        k.unproject(&c[1].pixel).normalize(),
        k.unproject(&c[2].pixel).normalize(),
    ];
    Ok(solve_bearings(&x, &j))
}

pub(crate) fn solve_bearings(x: &[Point3; 3], j: &[Vector3<f64>; 3]) -> Vec<Pose> {
    // side lengths opposite each point and bearing cosines
    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    let cos_a = j[1].dot(&j[2]);
    let cos_b = j[0].dot(&j[2]);
    let cos_g = j[0].dot(&j[1]);

    // ascending coefficients
    let q = [1.0, -2.0 * cos_b, 1.0];
    let n = poly_add(&[b2, 0.0, -b2], &poly_scale(&q, a2 - c2));
    let d = [2.0 * b2 * cos_g, -2.0 * b2 * cos_a];
    let d2 = poly_mul(&d, &d);
    let quartic = poly_add(
        &poly_scale(
            &poly_add(&poly_add(&d2, &poly_mul(&n, &n)), &poly_scale(&poly_mul(&n, &d), -2.0 * cos_g)),
            b2,
        ),
        &poly_scale(&poly_mul(&q, &d2), -c2),
    );

    let eq = Equations { a2, b2, c2, cos_a, cos_b, cos_g };
    let mut poses: Vec<Pose> = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let qv = 1.0 + v * v - 2.0 * v * cos_b;
        // first conic, quadratic in u: b²u² − 2b²cos_g u + (b² − c² q(v)) = 0
        for u in quadratic_roots(b2, -2.0 * b2 * cos_g, b2 - c2 * qv) {
            if u <= 0.0 {
                continue;
            }
            let s1 = (b2 / qv).sqrt();
            let depths = eq.polish(Vector3::new(s1, u * s1, v * s1));
            if depths.iter().any(|&s| !(s > 0.0)) || eq.relative_residual(&depths) > 1e-6 {
                continue;
            }
            let cam = [j[0] * depths[0], j[1] * depths[1], j[2] * depths[2]];
            let Some(pose) = absolute_orientation(x, &cam) else {
                continue;
            };
            let duplicate = poses.iter().any(|p| {
                rotation_error_deg(p, &pose) < 1e-7 && (p.translation - pose.translation).norm() < 1e-9 * (1.0 + depths.norm())
            });
            if !duplicate {
                poses.push(pose);
            }
        }
    }
    poses
}

struct Equations {
    a2: f64,
    b2: f64,
    c2: f64,
    cos_a: f64,
    cos_b: f64,
    cos_g: f64,
}

impl Equations {
    fn residual(&self, s: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * self.cos_g - self.c2,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * self.cos_b - self.b2,
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * self.cos_a - self.a2,
        )
    }

    fn relative_residual(&self, s: &Vector3<f64>) -> f64 {
        let scale = self.a2.max(self.b2).max(self.c2);
        self.residual(s).amax() / scale
    }

    fn polish(&self, mut s: Vector3<f64>) -> Vector3<f64> {
        let mut r = self.residual(&s);
        for _ in 0..8 {
            let jac = Matrix3::new(
                2.0 * s[0] - 2.0 * s[1] * self.cos_g,
                2.0 * s[1] - 2.0 * s[0] * self.cos_g,
                0.0,
                2.0 * s[0] - 2.0 * s[2] * self.cos_b,
                0.0,
                2.0 * s[2] - 2.0 * s[0] * self.cos_b,
                0.0,
                2.0 * s[1] - 2.0 * s[2] * self.cos_a,
                2.0 * s[2] - 2.0 * s[1] * self.cos_a,
            );
            let Some(step) = jac.lu().solve(&r) else {
                break;
            };
            let next = s - step;
            let rn = self.residual(&next);
            if rn.amax() >= r.amax() {
                break;
            }
            s = next;
            r = rn;
        }
        s
    }
}

/// Rigid `(R, t)` with `cam_i = R x_i + t`, from three non-collinear pairs.
pub(crate) fn absolute_orientation(x: &[Point3; 3], cam: &[Point3; 3]) -> Option<Pose> {
    let cx = (x[0] + x[1] + x[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (x[i] - cx) * (cam[i] - cc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    let t = cc - r * cx;
    let pose = Pose::from_rotation_matrix(&r, t);
    pose.is_finite().then_some(pose)
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += v;
    }
    out
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

fn poly_eval(c: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &coef in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + coef;
    }
    (p, dp)
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-300 {
        return if b.abs() > 1e-300 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    let scale = (b * b).max((4.0 * a * c).abs()).max(1e-300);
    if disc < 0.0 {
        // a tangent conic intersection lands slightly negative in floating point
        return if disc > -1e-10 * scale { vec![-b / (2.0 * a)] } else { Vec::new() };
    }
    let sq = disc.sqrt();
    // cancellation-free form
    let qq = -0.5 * (b + b.signum() * sq);
    if qq == 0.0 {
        return vec![0.0];
    }
    vec![qq / a, c / qq]
}

/// Near-real roots of an ascending-coefficient polynomial, from the
/// eigenvalues of its companion matrix and then Newton-polished.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|v| v / max).collect();
    while c.len() > 1 && c.last().unwrap().abs() < 1e-14 {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 0..deg {
        comp[(0, i)] = -c[deg - 1 - i] / lead;
        if i + 1 < deg {
            comp[(i + 1, i)] = 1.0;
        }
    }
    let mut roots = Vec::new();
    for z in comp.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-4 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut r = z.re;
        for _ in 0..20 {
            let (p, dp) = poly_eval(&c, r);
            if dp.abs() < 1e-300 {
                break;
            }
            let step = p / dp;
            r -= step;
            if step.abs() <= 1e-15 * (1.0 + r.abs()) {
                break;
            }
        }
        if r.is_finite() && !roots.iter().any(|&x: &f64| (x - r).abs() <= 1e-12 * (1.0 + r.abs())) {
            roots.push(r);
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project, translation_error, Pixel};
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn polynomial_roots() {
        // (x - 1)(x - 2)(x + 3)(x - 0.5)
        let p = poly_mul(&poly_mul(&[-1.0, 1.0], &[-2.0, 1.0]), &poly_mul(&[3.0, 1.0], &[-0.5, 1.0]));
        let mut r = real_roots(&p);
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-3.0, 0.5, 1.0, 2.0];
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // x² + 1 has none
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let c: Vec<_> = (0..3)
            .map(|i| Correspondence2D3D::new(Pixel::new(100.0 + i as f64, 200.0), Point3::new(i as f64, 0.0, 5.0)))
            .collect();
        assert_eq!(p3p(&c, &k()), Err(PnpError::DegenerateConfiguration));
    }

    #[test]
    fn symmetric_equilateral_has_several_exact_solutions() {
        let k = k();
        let pose = Pose::identity();
        let r = 1.0;
        let c: Vec<_> = (0..3)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 3.0;
                let x = Point3::new(r * a.cos(), r * a.sin(), 4.0);
                Correspondence2D3D::new(project(&pose, &k, &x).unwrap(), x)
            })
            .collect();
        let sols = p3p(&c, &k).unwrap();
        assert!(sols.len() >= 2, "got {} solutions", sols.len());
        assert!(sols.iter().any(|s| rotation_error_deg(s, &pose) < 1e-6 && translation_error(s, &pose) < 1e-6));
        for s in &sols {
            for corr in &c {
                let px = project(s, &k, &corr.point).unwrap();
                assert!((px - corr.pixel).norm() < 1e-9, "residual {}", (px - corr.pixel).norm());
            }
        }
    }

    #[test]
    fn random_instances_contain_ground_truth() {
        let k = k();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let gt = Pose::new(
                UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.0..3.0)),
                Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            );
            let inv = gt.inverse();
            let c: Vec<_> = (0..3)
                .map(|_| {
                    let pc = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(2.0..8.0));
                    let xw = inv.transform(&pc);
                    Correspondence2D3D::new(project(&gt, &k, &xw).unwrap(), xw)
                })
                .collect();
            let sols = p3p(&c, &k).unwrap();
            assert!(sols.iter().any(|s| rotation_error_deg(s, &gt) < 1e-6 && translation_error(s, &gt) < 1e-6));
        }
    }
}
