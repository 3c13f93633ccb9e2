//! Binary feature file, little-endian throughout.
//!
//! Layout: magic `MGRF` (4 bytes), format version u32, map count u32,
//! C u16, H u16, W u16, 2 zero padding bytes (20-byte header), then
//! `count * C * H * W` float32 values, sample-major in `(c, h, w)` order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FeatureMap;

pub const FEATURE_MAGIC: [u8; 4] = *b"MGRF";
pub const FEATURE_VERSION: u32 = 1;

/// Write a sequence of equally-shaped maps. Round-trips bit-exactly
/// through [`read_feature_file`].
pub fn write_feature_file(maps: &[FeatureMap], path: &Path) -> Result<()> {
    let (c, h, w) = maps.first().map_or((0, 0, 0), FeatureMap::shape);
    for m in maps {
        if m.shape() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "maps mix shapes {:?} and {:?}",
                (c, h, w),
                m.shape()
            )));
        }
    }
    if c > u16::MAX as usize || h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::ShapeMismatch(format!("shape {:?} exceeds u16 header fields", (c, h, w))));
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    out.write_all(&(maps.len() as u32).to_le_bytes())?;
    out.write_all(&(c as u16).to_le_bytes())?;
    out.write_all(&(h as u16).to_le_bytes())?;
    out.write_all(&(w as u16).to_le_bytes())?;
    out.write_all(&[0u8, 0u8])?;
    for m in maps {
        for v in m.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a feature file written by [`write_feature_file`].
pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureMap>> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FEATURE_VERSION {
        return Err(Error::CorruptHeader(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)?;
    let c = u16::from_le_bytes(u16buf) as usize;
    r.read_exact(&mut u16buf)?;
    let h = u16::from_le_bytes(u16buf) as usize;
    r.read_exact(&mut u16buf)?;
    let w = u16::from_le_bytes(u16buf) as usize;
    r.read_exact(&mut u16buf)?;
    if u16buf != [0, 0] {
        return Err(Error::CorruptHeader("nonzero padding bytes".into()));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = count * c * h * w * 4;
    if payload.len() != expected {
        return Err(Error::CorruptHeader(format!(
            "payload is {} bytes, header implies {expected} (count={count}, shape={c}x{h}x{w})",
            payload.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }

    let per_map = c * h * w;
    let mut maps = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(per_map * 4) {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptHeader("non-finite value in payload".into()));
        }
        maps.push(FeatureMap::new(c, h, w, values)?);
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn empty_file_round_trips() {
        let dir = tmp();
        let path = dir.path().join("empty.bin");
        write_feature_file(&[], &path).unwrap();
        assert_eq!(read_feature_file(&path).unwrap(), Vec::new());
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let dir = tmp();
        let path = dir.path().join("three.bin");
        let maps: Vec<FeatureMap> =
            (0..3).map(|i| FeatureMap::new(2, 2, 2, vec![i as f32; 8]).unwrap()).collect();
        write_feature_file(&maps, &path).unwrap();
        let bytes = std::fs::metadata(&path).unwrap().len();
        assert_eq!(bytes, 20 + 3 * 2 * 2 * 2 * 4);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("rt.bin");
        let mut rng = SeededRng::new(33);
        let maps: Vec<FeatureMap> = (0..17)
            .map(|_| {
                let values: Vec<f32> = (0..3 * 4 * 5).map(|_| rng.normal() as f32).collect();
                FeatureMap::new(3, 4, 5, values).unwrap()
            })
            .collect();
        write_feature_file(&maps, &path).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(maps, back);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tmp();
        let path = dir.path().join("bad.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"XXXX");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tmp();
        let path = dir.path().join("trunc.bin");
        let maps = vec![FeatureMap::new(2, 2, 2, vec![1.0; 8]).unwrap()];
        write_feature_file(&maps, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn count_payload_disagreement_rejected() {
        let dir = tmp();
        let path = dir.path().join("count.bin");
        let maps = vec![FeatureMap::new(2, 2, 2, vec![1.0; 8]).unwrap()];
        write_feature_file(&maps, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Claim two maps but keep one map's payload.
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn mixed_shapes_refused_on_write() {
        let dir = tmp();
        let path = dir.path().join("mixed.bin");
        let maps = vec![FeatureMap::zeros(2, 2, 2), FeatureMap::zeros(2, 3, 2)];
        assert!(matches!(write_feature_file(&maps, &path), Err(Error::ShapeMismatch(_))));
    }
}
