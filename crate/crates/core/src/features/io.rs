//! `.afeat` feature files.
//!
//! Little-endian layout: magic `AFEA`, then `u32` version (1), keypoint count
//! `K`, descriptor width `D` and global width `d`; then `K × (f32 x, f32 y,
//! f32 score)`, `K × D` descriptor values row-major, and `d` global values.

use std::fs;
use std::path::Path;

use super::{FeatureError, GlobalDescriptor, Keypoint, KeypointSet};
use crate::geom::Pixel;

pub const MAGIC: &[u8; 4] = b"AFEA";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "afeat";

pub fn encode(kp: &KeypointSet, global: &GlobalDescriptor) -> Vec<u8> {
    let k = kp.len();
    let mut out = Vec::with_capacity(20 + 4 * (3 * k + kp.descriptors().len() + global.dim()));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, k as u32, kp.dim() as u32, global.dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in kp.keypoints() {
        for v in [p.pt.x as f32, p.pt.y as f32, p.score] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in kp.descriptors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in global.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], FeatureError> {
        if self.buf.len() - self.pos < n {
            return Err(FeatureError::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, FeatureError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<(KeypointSet, GlobalDescriptor), FeatureError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FeatureError::Format { offset: 0, msg: "bad magic".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FeatureError::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let k = r.u32("keypoint count")? as usize;
    let dim = r.u32("descriptor width")? as usize;
    let gdim = r.u32("global width")? as usize;
    let needed = k
        .checked_mul(dim)
        .and_then(|n| n.checked_add(3 * k))
        .and_then(|n| n.checked_add(gdim))
        .and_then(|n| n.checked_mul(4));
    let remaining = buf.len() - r.pos;
    if needed.is_none_or(|n| n > remaining) {
        return Err(FeatureError::Format {
            offset: buf.len() as u64,
            msg: format!("truncated: header declares {k} keypoints of width {dim} and global width {gdim}"),
        });
    }
    let mut keypoints = Vec::with_capacity(k);
    for _ in 0..k {
        let x = r.f32("keypoint x")?;
        let y = r.f32("keypoint y")?;
        let score = r.f32("keypoint score")?;
        keypoints.push(Keypoint { pt: Pixel::new(x as f64, y as f64), score });
    }
    let mut descriptors = Vec::with_capacity(k * dim);
    for _ in 0..k * dim {
        descriptors.push(r.f32("descriptor")?);
    }
    let mut global = Vec::with_capacity(gdim);
    for _ in 0..gdim {
        global.push(r.f32("global descriptor")?);
    }
    if r.pos != buf.len() {
        return Err(FeatureError::Format {
            offset: r.pos as u64,
            msg: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    let set = KeypointSet::new(keypoints, descriptors, dim).map_err(|e| FeatureError::Format {
        offset: 20,
        msg: e.to_string(),
    })?;
    Ok((set, GlobalDescriptor::from_raw(global)))
}

pub fn export_features(path: &Path, kp: &KeypointSet, global: &GlobalDescriptor) -> Result<(), FeatureError> {
    fs::write(path, encode(kp, global))?;
    Ok(())
}

pub fn import_features(path: &Path) -> Result<(KeypointSet, GlobalDescriptor), FeatureError> {
    decode(&fs::read(path)?)
}

/// Imports a batch of files that must share one descriptor width.
pub fn import_consistent(paths: &[impl AsRef<Path>]) -> Result<Vec<(KeypointSet, GlobalDescriptor)>, FeatureError> {
    let mut out: Vec<(KeypointSet, GlobalDescriptor)> = Vec::with_capacity(paths.len());
    for p in paths {
        let (kp, g) = import_features(p.as_ref())?;
        if let Some((first, first_g)) = out.first() {
            if !kp.is_empty() && !first.is_empty() && kp.dim() != first.dim() {
                return Err(FeatureError::DimensionMismatch { expected: first.dim(), found: kp.dim() });
            }
            if g.dim() != first_g.dim() {
                return Err(FeatureError::DimensionMismatch { expected: first_g.dim(), found: g.dim() });
            }
        }
        out.push((kp, g));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_from(raw: &[(f32, f32, f32)], dim: usize, fill: f32) -> KeypointSet {
        let kps = raw
            .iter()
            .map(|&(x, y, s)| Keypoint { pt: Pixel::new(x as f64, y as f64), score: s })
            .collect();
        let desc = (0..raw.len() * dim).map(|i| fill + i as f32 * 0.25).collect();
        KeypointSet::new(kps, desc, dim).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            raw in prop::collection::vec((0.0f32..2000.0, 0.0f32..2000.0, 0.0f32..1.0), 0..40),
            dim in 1usize..70,
            fill in -1.0f32..1.0,
            global in prop::collection::vec(-1.0f32..1.0, 0..300),
        ) {
            let kp = set_from(&raw, dim, fill);
            let g = GlobalDescriptor::from_raw(global);
            let (kp2, g2) = decode(&encode(&kp, &g)).unwrap();
            prop_assert_eq!(&kp, &kp2);
            prop_assert_eq!(&g, &g2);
            for (a, b) in kp.descriptors().iter().zip(kp2.descriptors()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncation_is_a_format_error() {
        let kp = set_from(&[(1.0, 2.0, 0.5), (3.0, 4.0, 0.25)], 8, 0.0);
        let bytes = encode(&kp, &GlobalDescriptor::from_raw(vec![1.0; 4]));
        for cut in [0, 3, 10, 20, 30, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(FeatureError::Format { .. })), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(FeatureError::Format { .. })));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(FeatureError::Format { offset: 0, .. })));
    }

    #[test]
    fn hand_built_file_with_wide_descriptors() {
        // one keypoint, 256-wide descriptor, 2-wide global
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AFEA");
        for v in [1u32, 1, 256, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [10.5f32, 20.25, 0.75] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..256 {
            bytes.extend_from_slice(&(if i == 3 { 1.0f32 } else { 0.0 }).to_le_bytes());
        }
        for v in [0.6f32, 0.8] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (kp, g) = decode(&bytes).unwrap();
        assert_eq!(kp.dim(), 256);
        assert_eq!(kp.len(), 1);
        assert_eq!(kp.point(0), Pixel::new(10.5, 20.25));
        assert_eq!(kp.descriptor(0)[3], 1.0);
        assert_eq!(g.values(), &[0.6, 0.8]);
    }

    #[test]
    fn batch_import_rejects_mixed_widths() {
        let dir = tempfile::tempdir().unwrap();
        let g = GlobalDescriptor::from_raw(vec![1.0]);
        let a = dir.path().join("0.afeat");
        let b = dir.path().join("1.afeat");
        export_features(&a, &set_from(&[(1.0, 1.0, 1.0)], 8, 0.0), &g).unwrap();
        export_features(&b, &set_from(&[(1.0, 1.0, 1.0)], 16, 0.0), &g).unwrap();
        assert!(matches!(
            import_consistent(&[&a, &b]),
            Err(FeatureError::DimensionMismatch { expected: 8, found: 16 })
        ));
        assert_eq!(import_consistent(&[&a, &a]).unwrap().len(), 2);
    }
}
