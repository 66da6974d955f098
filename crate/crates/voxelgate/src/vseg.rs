//! VSEG1 array container and `key = value` sidecars.
//!
//! Layout: magic `VSEG1\0`, u8 dtype (0 = f32, 1 = u8), u8 rank, rank × u32
//! little-endian extents, then the row-major little-endian payload.

use std::collections::BTreeMap;
use std::path::Path;

use voxelgate_core::{LabelVolume, Tensor};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 6] = b"VSEG1\0";

#[derive(Debug, Clone, PartialEq)]
pub enum Array {
    F32(Tensor<f32>),
    U8 { extents: Vec<usize>, values: Vec<u8> },
}

impl Array {
    pub fn extents(&self) -> &[usize] {
        match self {
            Array::F32(t) => t.extents(),
            Array::U8 { extents, .. } => extents,
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            Array::F32(t) => Ok(t),
            Array::U8 { .. } => Err(Error::CorruptContainer("expected f32 payload, found u8".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            Array::U8 { extents, values } => {
                let e: [usize; 3] = extents
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::CorruptContainer(format!("label array must be rank 3, got {extents:?}")))?;
                Ok(LabelVolume::new(e, values)?)
            }
            Array::F32(_) => Err(Error::CorruptContainer("expected u8 payload, found f32".into())),
        }
    }
}

impl From<&LabelVolume> for Array {
    fn from(l: &LabelVolume) -> Self {
        Array::U8 { extents: l.extents().to_vec(), values: l.values().to_vec() }
    }
}

pub fn encode(a: &Array) -> Result<Vec<u8>> {
    let ext = a.extents();
    let rank = u8::try_from(ext.len()).map_err(|_| Error::CorruptContainer(format!("rank {} > 255", ext.len())))?;
    let mut out = Vec::with_capacity(8 + 4 * ext.len());
    out.extend_from_slice(MAGIC);
    out.push(match a {
        Array::F32(_) => 0,
        Array::U8 { .. } => 1,
    });
    out.push(rank);
    for &e in ext {
        let e = u32::try_from(e).map_err(|_| Error::CorruptContainer(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    match a {
        Array::F32(t) => t.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Array::U8 { values, .. } => out.extend_from_slice(values),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Array> {
    let corrupt = |m: String| Error::CorruptContainer(m);
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(corrupt("missing VSEG1 magic".into()));
    }
    let (dtype, rank) = (bytes[6], bytes[7] as usize);
    let head = 8 + 4 * rank;
    if bytes.len() < head {
        return Err(corrupt(format!("header declares rank {rank} but the file ends early")));
    }
    let extents: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..][..4].try_into().expect("4 bytes")) as usize)
        .collect();
    let n = extents.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| corrupt("extent overflow".into()))?;
    let payload = &bytes[head..];
    let width = match dtype {
        0 => 4,
        1 => 1,
        d => return Err(corrupt(format!("unknown dtype code {d}"))),
    };
    if n.checked_mul(width) != Some(payload.len()) {
        return Err(corrupt(format!("payload has {} bytes, extents {extents:?} need {}", payload.len(), n * width)));
    }
    Ok(match dtype {
        0 => {
            let vals = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Array::F32(Tensor::new(&extents, vals)?)
        }
        _ => Array::U8 { extents, values: payload.to_vec() },
    })
}

pub fn write(path: &Path, a: &Array) -> Result<()> {
    fsutil::write_atomic(path, &encode(a)?)
}

pub fn read(path: &Path) -> Result<Array> {
    decode(&fsutil::read(path)?).map_err(|e| e.in_file(path))
}

/// Ordered `key = value` metadata.
pub type Sidecar = BTreeMap<String, String>;

pub fn format_sidecar(meta: &Sidecar) -> String {
    meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_sidecar(text: &str) -> Result<Sidecar> {
    let mut out = Sidecar::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::CorruptContainer(format!("line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
