use nalgebra::Vector3;

use crate::geom::{Point3, Pose};

/// Samples a uniform Catmull-Rom spline through `control` at `samples`
/// evenly spaced parameter values, endpoints included. The end segments
/// use mirrored phantom points so the curve starts and ends on the
/// controls.
pub fn catmull_rom(control: &[Point3], samples: usize) -> Vec<Point3> {
    match (control.len(), samples) {
        (0, _) | (_, 0) => return Vec::new(),
        (1, n) => return vec![control[0]; n],
        _ => {}
    }
    let n = control.len();
    let at = |i: isize| -> Point3 {
        if i < 0 {
            control[0] * 2.0 - control[1]
        } else if i as usize >= n {
            control[n - 1] * 2.0 - control[n - 2]
        } else {
            control[i as usize]
        }
    };
    let span = (n - 1) as f64;
    (0..samples)
        .map(|s| {
            let u = if samples == 1 { 0.0 } else { span * s as f64 / (samples - 1) as f64 };
            let seg = (u.floor() as usize).min(n - 2);
            let t = u - seg as f64;
            let i = seg as isize;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            let t2 = t * t;
            let t3 = t2 * t;
            (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3)
                * 0.5
        })
        .collect()
}

/// Poses at `eyes[i]` looking at `targets[i]`.
pub fn look_at_trajectory(eyes: &[Point3], targets: &[Point3], up: &Vector3<f64>) -> Vec<Pose> {
    eyes.iter().zip(targets).map(|(e, t)| Pose::look_at(e, t, up)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_through_controls() {
        let c = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 2.0, 0.0),
            Point3::new(3.0, 1.0, 1.0),
            Point3::new(4.0, 0.0, 0.0),
        ];
        let s = catmull_rom(&c, 7);
        assert_eq!(s.len(), 7);
        for (i, p) in c.iter().enumerate() {
            assert!((s[2 * i] - p).norm() < 1e-12);
        }
    }

    #[test]
    fn straight_line_stays_straight() {
        let c: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        for p in catmull_rom(&c, 33) {
            assert!(p.y.abs() < 1e-12 && p.z.abs() < 1e-12);
        }
    }
}
