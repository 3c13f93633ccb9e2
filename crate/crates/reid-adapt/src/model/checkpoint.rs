//! Parameter checkpoint container: magic `MGRP`, format version, then a
//! table of named tensors (name length u16, name bytes, rank u8, u32 dims,
//! little-endian float32 payload).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Axis, Linear, ModelParams, PartRegion};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MGRP";
const CHECKPOINT_VERSION: u32 = 1;

struct TensorEntry {
    name: String,
    dims: Vec<u32>,
    values: Vec<f32>,
}

fn write_tensor<W: Write>(w: &mut W, t: &TensorEntry) -> Result<()> {
    let name = t.name.as_bytes();
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&[t.dims.len() as u8])?;
    for d in &t.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &t.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn matrix_entry(name: String, m: &Matrix) -> TensorEntry {
    TensorEntry {
        name,
        dims: vec![m.rows() as u32, m.cols() as u32],
        values: m.data().iter().map(|&v| v as f32).collect(),
    }
}

fn vector_entry(name: String, v: &[f64]) -> TensorEntry {
    TensorEntry {
        name,
        dims: vec![v.len() as u32],
        values: v.iter().map(|&x| x as f32).collect(),
    }
}

/// Serialize parameters. Payloads are stored as float32.
pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut entries = vec![
        TensorEntry {
            name: "meta.dims".into(),
            dims: vec![5],
            values: vec![
                params.channels as f32,
                params.d_g as f32,
                params.d_p as f32,
                params.num_classes as f32,
                params.parts.len() as f32,
            ],
        },
        TensorEntry {
            name: "meta.parts".into(),
            dims: vec![params.parts.len() as u32, 3],
            values: params
                .parts
                .iter()
                .flat_map(|p| {
                    let axis = match p.axis {
                        Axis::Vertical => 0.0,
                        Axis::Horizontal => 1.0,
                    };
                    [axis, p.pieces as f32, p.index as f32]
                })
                .collect(),
        },
    ];
    for (prefix, layers) in [
        ("adapter", &params.adapters),
        ("reducer", &params.reducers),
        ("classifier", &params.classifiers),
    ] {
        for (i, layer) in layers.iter().enumerate() {
            entries.push(matrix_entry(format!("{prefix}.{i}.weight"), &layer.weight));
            entries.push(vector_entry(format!("{prefix}.{i}.bias"), &layer.bias));
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for t in &entries {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(Error::CorruptHeader("truncated tensor entry".into()));
        }
        filled += n;
    }
    Ok(true)
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Option<TensorEntry>> {
    let mut len2 = [0u8; 2];
    if !read_exact_or_eof(r, &mut len2)? {
        return Ok(None);
    }
    let name_len = u16::from_le_bytes(len2) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::CorruptHeader("tensor name is not utf-8".into()))?;
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let mut dims = Vec::with_capacity(rank[0] as usize);
    let mut d4 = [0u8; 4];
    for _ in 0..rank[0] {
        r.read_exact(&mut d4)?;
        dims.push(u32::from_le_bytes(d4));
    }
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Some(TensorEntry { name, dims, values }))
}

fn take_matrix(
    entries: &mut std::collections::BTreeMap<String, TensorEntry>,
    name: &str,
) -> Result<Matrix> {
    let t = entries
        .remove(name)
        .ok_or_else(|| Error::CorruptHeader(format!("missing tensor {name}")))?;
    if t.dims.len() != 2 {
        return Err(Error::CorruptHeader(format!("tensor {name} is not rank 2")));
    }
    Matrix::from_vec(
        t.dims[0] as usize,
        t.dims[1] as usize,
        t.values.iter().map(|&v| f64::from(v)).collect(),
    )
}

fn take_vector(
    entries: &mut std::collections::BTreeMap<String, TensorEntry>,
    name: &str,
) -> Result<Vec<f64>> {
    let t = entries
        .remove(name)
        .ok_or_else(|| Error::CorruptHeader(format!("missing tensor {name}")))?;
    if t.dims.len() != 1 {
        return Err(Error::CorruptHeader(format!("tensor {name} is not rank 1")));
    }
    Ok(t.values.iter().map(|&v| f64::from(v)).collect())
}

/// Load parameters written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptHeader(format!("unsupported checkpoint version {version}")));
    }

    let mut entries = std::collections::BTreeMap::new();
    while let Some(t) = read_tensor(&mut r)? {
        entries.insert(t.name.clone(), t);
    }

    let meta = entries
        .remove("meta.dims")
        .ok_or_else(|| Error::CorruptHeader("missing tensor meta.dims".into()))?;
    if meta.values.len() != 5 {
        return Err(Error::CorruptHeader("meta.dims must hold 5 values".into()));
    }
    let channels = meta.values[0] as usize;
    let d_g = meta.values[1] as usize;
    let d_p = meta.values[2] as usize;
    let num_classes = meta.values[3] as usize;
    let n_parts = meta.values[4] as usize;

    let part_table = entries
        .remove("meta.parts")
        .ok_or_else(|| Error::CorruptHeader("missing tensor meta.parts".into()))?;
    if part_table.values.len() != n_parts * 3 {
        return Err(Error::CorruptHeader("meta.parts shape disagrees with meta.dims".into()));
    }
    let parts: Vec<PartRegion> = part_table
        .values
        .chunks_exact(3)
        .map(|row| {
            let axis = if row[0] == 0.0 { Axis::Vertical } else { Axis::Horizontal };
            PartRegion { axis, pieces: row[1] as usize, index: row[2] as usize }
        })
        .collect();

    let mut layer_group = |prefix: &str, count: usize| -> Result<Vec<Linear>> {
        (0..count)
            .map(|i| {
                Ok(Linear {
                    weight: take_matrix(&mut entries, &format!("{prefix}.{i}.weight"))?,
                    bias: take_vector(&mut entries, &format!("{prefix}.{i}.bias"))?,
                })
            })
            .collect()
    };
    let adapters = layer_group("adapter", 3)?;
    let reducers = layer_group("reducer", n_parts)?;
    let classifiers = layer_group("classifier", n_parts)?;

    Ok(ModelParams { adapters, reducers, classifiers, parts, channels, d_g, d_p, num_classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_parts;
    use crate::numerics::SeededRng;

    #[test]
    fn checkpoint_round_trip_preserves_f32_values() {
        let mut rng = SeededRng::new(21);
        let params = ModelParams::init(6, 5, 4, 7, standard_parts(true, true), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        write_checkpoint(&params, &path).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded.channels, 6);
        assert_eq!(loaded.parts, params.parts);
        for (a, b) in params.adapters.iter().zip(&loaded.adapters) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn checkpoint_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::BadMagic { .. })));
    }
}
