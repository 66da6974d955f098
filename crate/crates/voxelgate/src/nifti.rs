//! NIfTI-1 single-file reader and writer (`.nii`, `.nii.gz`).
//!
//! Only the fields needed to locate and decode voxels are interpreted;
//! orientation fields are ignored on read and zeroed on write. Voxel data is returned in row-major `(L, W, S)` order, i.e. the
//! first NIfTI axis is the slowest.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use voxelgate_core::Tensor;

use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            64 => Ok(Datatype::F64),
            c => Err(Error::UnsupportedDatatype(c)),
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::U8 => 8,
            Datatype::I16 => 16,
            Datatype::F32 => 32,
            Datatype::F64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bitpix() as usize / 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    pub endian: Endian,
}

impl NiftiHeader {
    /// Header for a little-endian single-file volume.
    pub fn for_extents(extents: [usize; 3], datatype: Datatype, spacing: [f32; 3]) -> Result<Self> {
        let mut dim = [1i16; 8];
        dim[0] = 3;
        for (d, &e) in dim[1..4].iter_mut().zip(&extents) {
            *d = i16::try_from(e)
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::CorruptHeader(format!("extent {e} does not fit a NIfTI-1 dim")))?;
        }
        let mut pixdim = [1.0f32; 8];
        pixdim[1..4].copy_from_slice(&spacing);
        Ok(Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim,
            datatype,
            bitpix: datatype.bitpix(),
            pixdim,
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            magic: *b"n+1\0",
            endian: Endian::Little,
        })
    }

    /// `(dim[1], dim[2], dim[3])`; trailing dimensions must be 1.
    pub fn extents(&self) -> [usize; 3] {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    pub fn voxel_count(&self) -> usize {
        (1..=self.dim[0] as usize).map(|i| self.dim[i] as usize).product()
    }

    pub fn data_bytes(&self) -> usize {
        self.voxel_count() * self.datatype.bytes()
    }

    pub fn spacing(&self) -> [f32; 3] {
        [self.pixdim[1], self.pixdim[2], self.pixdim[3]]
    }
}

struct Reader<'a> {
    b: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        self.b[off..off + N].try_into().expect("offset within header")
    }
    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(off)),
            Endian::Big => i16::from_be_bytes(self.arr(off)),
        }
    }
    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(off)),
            Endian::Big => f32::from_be_bytes(self.arr(off)),
        }
    }
}

/// Parses and validates a 348-byte header.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::CorruptHeader(format!("header has {} bytes, need {HEADER_SIZE}", bytes.len())));
    }
    let b = &bytes[..HEADER_SIZE];
    let endian = if i32::from_le_bytes(b[0..4].try_into().expect("4 bytes")) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(b[0..4].try_into().expect("4 bytes")) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::CorruptHeader("sizeof_hdr is not 348 in either byte order".into()));
    };
    let r = Reader { b, endian };
    let magic: [u8; 4] = r.arr(OFF_MAGIC);
    if &magic != b"n+1\0" && &magic != b"ni1\0" {
        return Err(Error::BadMagic(magic));
    }
    let datatype = Datatype::from_code(r.i16(OFF_DATATYPE))?;
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(OFF_DIM + 2 * i);
    }
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::CorruptHeader(format!("dim[0] = {rank} outside 1..=7")));
    }
    if let Some(i) = (1..=rank as usize).find(|&i| dim[i] < 1) {
        return Err(Error::CorruptHeader(format!("dim[{i}] = {} < 1", dim[i])));
    }
    if rank > 3 && dim[4..=rank as usize].iter().any(|&d| d != 1) {
        return Err(Error::CorruptHeader(format!("only 3D volumes are supported, dim = {dim:?}")));
    }
    // rank < 3 volumes are treated as having unit trailing extents
    for d in dim.iter_mut().take(4).skip(rank as usize + 1) {
        *d = 1;
    }
    let bitpix = r.i16(OFF_BITPIX);
    if bitpix != datatype.bitpix() {
        return Err(Error::CorruptHeader(format!("bitpix {bitpix} inconsistent with datatype {}", datatype.code())));
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(OFF_PIXDIM + 4 * i);
    }
    let vox_offset = r.f32(OFF_VOX_OFFSET);
    if &magic == b"n+1\0" && !(vox_offset >= VOX_OFFSET as f32 && vox_offset.is_finite() && vox_offset < 1e9) {
        return Err(Error::CorruptHeader(format!("vox_offset {vox_offset} invalid for a single-file volume")));
    }
    let (scl_slope, scl_inter) = (r.f32(OFF_SCL_SLOPE), r.f32(OFF_SCL_INTER));
    if !scl_slope.is_finite() || !scl_inter.is_finite() {
        return Err(Error::CorruptHeader("non-finite scaling".into()));
    }
    Ok(NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim,
        datatype,
        bitpix,
        pixdim,
        vox_offset,
        scl_slope,
        scl_inter,
        magic,
        endian,
    })
}

/// Serializes a header (always little-endian) into 348 bytes.
pub fn encode_header(h: &NiftiHeader) -> [u8; HEADER_SIZE] {
    let mut b = [0u8; HEADER_SIZE];
    b[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    for (i, d) in h.dim.iter().enumerate() {
        b[OFF_DIM + 2 * i..][..2].copy_from_slice(&d.to_le_bytes());
    }
    b[OFF_DATATYPE..][..2].copy_from_slice(&h.datatype.code().to_le_bytes());
    b[OFF_BITPIX..][..2].copy_from_slice(&h.datatype.bitpix().to_le_bytes());
    for (i, p) in h.pixdim.iter().enumerate() {
        b[OFF_PIXDIM + 4 * i..][..4].copy_from_slice(&p.to_le_bytes());
    }
    b[OFF_VOX_OFFSET..][..4].copy_from_slice(&h.vox_offset.to_le_bytes());
    b[OFF_SCL_SLOPE..][..4].copy_from_slice(&h.scl_slope.to_le_bytes());
    b[OFF_SCL_INTER..][..4].copy_from_slice(&h.scl_inter.to_le_bytes());
    b[OFF_MAGIC..][..4].copy_from_slice(&h.magic);
    b
}

/// A decoded volume. `data` holds `raw·slope + inter` (slope 0 means 1) in
/// row-major `(L, W, S)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub header: NiftiHeader,
    pub data: Tensor<f64>,
}

impl NiftiVolume {
    pub fn extents(&self) -> [usize; 3] {
        self.header.extents()
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.data.cast()
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Decodes a complete file image (header + data), gunzipping if needed.
pub fn decode(bytes: &[u8]) -> Result<NiftiVolume> {
    let owned;
    let bytes = if is_gzip(bytes) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptHeader(format!("gzip stream: {e}")))?;
        owned = out;
        &owned[..]
    } else {
        bytes
    };
    let header = parse_header(bytes)?;
    if &header.magic == b"ni1\0" {
        return Err(Error::CorruptHeader("two-file (.hdr/.img) volumes are not supported".into()));
    }
    let offset = header.vox_offset as usize;
    let need = header.data_bytes();
    let available = bytes.len().saturating_sub(offset);
    if available < need {
        return Err(Error::TruncatedData { expected: need, found: available });
    }
    let raw = &bytes[offset..offset + need];
    let slope = if header.scl_slope == 0.0 { 1.0 } else { header.scl_slope as f64 };
    let inter = header.scl_inter as f64;
    let dt = header.datatype;
    let big = header.endian == Endian::Big;
    let value = |i: usize| -> f64 {
        let c = &raw[i * dt.bytes()..][..dt.bytes()];
        match (dt, big) {
            (Datatype::U8, _) => c[0] as f64,
            (Datatype::I16, false) => i16::from_le_bytes([c[0], c[1]]) as f64,
            (Datatype::I16, true) => i16::from_be_bytes([c[0], c[1]]) as f64,
            (Datatype::F32, false) => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            (Datatype::F32, true) => f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            (Datatype::F64, false) => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            (Datatype::F64, true) => f64::from_be_bytes(c.try_into().expect("8 bytes")),
        }
    };
    // NIfTI stores the first axis fastest; transpose into row-major (L, W, S)
    let [l, w, s] = header.extents();
    let mut data = vec![0f64; l * w * s];
    for k in 0..s {
        for j in 0..w {
            for i in 0..l {
                let v = value(i + l * (j + w * k)) * slope + inter;
                data[(i * w + j) * s + k] = v;
            }
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Core(voxelgate_core::Error::NonFiniteInput));
    }
    let data = Tensor::new(&[l, w, s], data)?;
    Ok(NiftiVolume { header, data })
}

pub fn read_volume(path: &Path) -> Result<NiftiVolume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

/// Encodes `data` (row-major `(L, W, S)`) as a little-endian `n+1` image.
pub fn encode(data: &Tensor<f64>, datatype: Datatype, spacing: [f32; 3]) -> Result<Vec<u8>> {
    let e: [usize; 3] = data
        .extents()
        .try_into()
        .map_err(|_| Error::Core(voxelgate_core::Error::ShapeMismatch(format!("expected rank 3, got {:?}", data.extents()))))?;
    let header = NiftiHeader::for_extents(e, datatype, spacing)?;
    let [l, w, s] = e;
    let mut out = Vec::with_capacity(VOX_OFFSET + data.len() * datatype.bytes());
    out.extend_from_slice(&encode_header(&header));
    out.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_SIZE]);
    let vals = data.values();
    for k in 0..s {
        for j in 0..w {
            for i in 0..l {
                let v = vals[(i * w + j) * s + k];
                match datatype {
                    Datatype::U8 => out.push(checked_int(v, 0.0, u8::MAX as f64, "uint8")? as u8),
                    Datatype::I16 => out.extend_from_slice(
                        &(checked_int(v, i16::MIN as f64, i16::MAX as f64, "int16")? as i16).to_le_bytes(),
                    ),
                    Datatype::F32 => {
                        let f = v as f32;
                        if v.is_finite() && !f.is_finite() {
                            return Err(Error::ValueOverflow(format!("{v} does not fit float32")));
                        }
                        out.extend_from_slice(&f.to_le_bytes());
                    }
                    Datatype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
    }
    Ok(out)
}

fn checked_int(v: f64, lo: f64, hi: f64, name: &str) -> Result<f64> {
    if v.fract() != 0.0 || !(lo..=hi).contains(&v) {
        return Err(Error::ValueOverflow(format!("{v} is not representable as {name}")));
    }
    Ok(v)
}

/// Writes a volume; gzip is applied when the path ends in `.gz`.
pub fn write_volume(path: &Path, data: &Tensor<f64>, datatype: Datatype, spacing: [f32; 3]) -> Result<()> {
    let bytes = encode(data, datatype, spacing)?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") { gzip(&bytes)? } else { bytes };
    crate::fsutil::write_atomic(path, &bytes)
}

pub fn gzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).and_then(|_| enc.finish()).map_err(|e| Error::io(Path::new("<gzip>"), e))
}
