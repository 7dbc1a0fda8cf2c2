use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::geom::{FrameId, Pose};
use crate::refine::Provenance;

use super::FrameError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProvenanceRow {
    pub frame_id: FrameId,
    pub provenance: Provenance,
    pub inliers: usize,
}

const PROVENANCE_HEADER: &str = "frame_id\tprovenance\tinliers";

pub fn write_provenance<W: Write>(mut w: W, rows: &[ProvenanceRow]) -> std::io::Result<()> {
    writeln!(w, "{PROVENANCE_HEADER}")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}", r.frame_id, r.provenance, r.inliers)?;
    }
    w.flush()
}

pub fn read_provenance<R: BufRead>(r: R) -> Result<Vec<ProvenanceRow>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() || line == PROVENANCE_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || format!("provenance line {}: expected `frame_id provenance inliers`", i + 1);
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(ProvenanceRow {
            frame_id: f[0].parse().map_err(|_| bad())?,
            provenance: Provenance::parse(f[1]).ok_or_else(bad)?,
            inliers: f[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Plot data: estimated and ground-truth camera centres plus errors, one
/// row per frame. Missing values are left empty.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    rows: &[ProvenanceRow],
    est: &HashMap<FrameId, Pose>,
    gt: &HashMap<FrameId, Pose>,
    errors: &HashMap<FrameId, FrameError>,
) -> std::io::Result<()> {
    writeln!(w, "frame_id,provenance,x,y,z,gt_x,gt_y,gt_z,translation_error,rotation_error_deg")?;
    for r in rows {
        let c = est.get(&r.frame_id).map(|p| p.center());
        let g = gt.get(&r.frame_id).map(|p| p.center());
        let e = errors.get(&r.frame_id);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.frame_id,
            r.provenance,
            opt(c.map(|c| c.x)),
            opt(c.map(|c| c.y)),
            opt(c.map(|c| c.z)),
            opt(g.map(|c| c.x)),
            opt(g.map(|c| c.y)),
            opt(g.map(|c| c.z)),
            opt(e.and_then(|e| e.translation)),
            opt(e.and_then(|e| e.rotation_deg)),
        )?;
    }
    w.flush()
}

fn colour(p: Provenance) -> &'static str {
    match p {
        Provenance::AnchorGlobal => "#1f77b4",
        Provenance::AnchorTemporal => "#2ca02c",
        Provenance::Refined => "#ff7f0e",
        Provenance::Unlocalized => "#d62728",
    }
}

/// Top-down (x, z) drawing of the ground-truth path and the estimated
/// camera centres coloured by provenance.
pub fn trajectory_svg(rows: &[ProvenanceRow], est: &HashMap<FrameId, Pose>, gt: &HashMap<FrameId, Pose>) -> String {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let gt_path: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| gt.get(&r.frame_id))
        .map(|p| {
            let c = p.center();
            (c.x, c.z)
        })
        .collect();
    pts.extend(&gt_path);
    let est_pts: Vec<(f64, f64, Provenance)> = rows
        .iter()
        .filter_map(|r| {
            est.get(&r.frame_id).map(|p| {
                let c = p.center();
                (c.x, c.z, r.provenance)
            })
        })
        .collect();
    pts.extend(est_pts.iter().map(|p| (p.0, p.1)));

    let (size, margin) = (600.0, 20.0);
    let (mut x0, mut x1, mut z0, mut z1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, z) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        z0 = z0.min(z);
        z1 = z1.max(z);
    }
    if pts.is_empty() {
        (x0, x1, z0, z1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = (x1 - x0).max(z1 - z0).max(1e-9);
    let sx = |x: f64| margin + (x - x0) / span * (size - 2.0 * margin);
    let sz = |z: f64| size - margin - (z - z0) / span * (size - 2.0 * margin);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    if gt_path.len() > 1 {
        let line: Vec<String> = gt_path.iter().map(|&(x, z)| format!("{:.2},{:.2}", sx(x), sz(z))).collect();
        let _ = writeln!(s, r##"<polyline fill="none" stroke="#999999" stroke-width="1.5" points="{}"/>"##, line.join(" "));
    }
    for (x, z, p) in est_pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, sx(x), sz(z), colour(p));
    }
    for (i, p) in [Provenance::AnchorGlobal, Provenance::AnchorTemporal, Provenance::Refined, Provenance::Unlocalized]
        .into_iter()
        .enumerate()
    {
        let y = 16.0 + 14.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="10" cy="{}" r="4" fill="{}"/>"#, y - 4.0, colour(p));
        let _ = writeln!(s, r#"<text x="18" y="{y}" font-family="sans-serif" font-size="11">{p}</text>"#);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_round_trip() {
        let rows = vec![
            ProvenanceRow {
                frame_id: 3,
                provenance: Provenance::Refined,
                inliers: 20,
            },
            ProvenanceRow {
                frame_id: 4,
                provenance: Provenance::Unlocalized,
                inliers: 0,
            },
        ];
        let mut buf = Vec::new();
        write_provenance(&mut buf, &rows).unwrap();
        assert_eq!(read_provenance(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn svg_is_well_formed() {
        let rows = vec![ProvenanceRow {
            frame_id: 0,
            provenance: Provenance::AnchorGlobal,
            inliers: 60,
        }];
        let est: HashMap<_, _> = [(0, Pose::identity())].into_iter().collect();
        let svg = trajectory_svg(&rows, &est, &est);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
