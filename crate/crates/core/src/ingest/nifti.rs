//! NIfTI-1 single-file (`.nii`, optionally gzip-wrapped) reader and writer.
//!
//! Only the fields needed for slicing are interpreted: `sizeof_hdr`, `dim`,
//! `datatype`, `bitpix`, `pixdim`, `vox_offset` and `magic`. Byte order is
//! detected from `sizeof_hdr`, which must read as 348 in one of the two
//! orders.

use std::io::Read;

use flate2::read::GzDecoder;

use crate::error::IngestError;

pub const HEADER_SIZE: usize = 348;
/// Default data offset for single-file volumes (header + 4-byte extension flag).
pub const DEFAULT_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self, IngestError> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            other => Err(IngestError::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    /// `(width, height, depth)` in voxels.
    pub dims: [usize; 3],
    pub datatype: Datatype,
    /// Millimetres; informational only.
    pub voxel_spacing: [f32; 3],
    pub vox_offset: usize,
    pub endian: Endian,
}

impl VolumeMeta {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.voxel_count() * self.datatype.bytes_per_voxel()
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn f32_at(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        match self.endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
}

pub fn parse_volume_header(bytes: &[u8]) -> Result<VolumeMeta, IngestError> {
    if bytes.len() < HEADER_SIZE {
        return Err(IngestError::TruncatedInput {
            needed: HEADER_SIZE,
            available: bytes.len(),
        });
    }
    let raw: [u8; 4] = bytes[offsets::SIZEOF_HDR..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(IngestError::MalformedHeader(format!(
            "sizeof_hdr is {}, expected {HEADER_SIZE}",
            i32::from_le_bytes(raw)
        )));
    };
    let f = Fields { bytes, endian };

    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(IngestError::MalformedHeader(format!(
            "magic {magic:?} is not the single-file marker \"n+1\""
        )));
    }

    let ndim = f.i16_at(offsets::DIM);
    if !(1..=7).contains(&ndim) {
        return Err(IngestError::MalformedHeader(format!(
            "dim[0] = {ndim}, expected 1..=7"
        )));
    }
    let mut dims = [1usize; 3];
    for i in 1..=ndim as usize {
        let d = f.i16_at(offsets::DIM + 2 * i);
        if d < 1 {
            return Err(IngestError::MalformedHeader(format!("dim[{i}] = {d}")));
        }
        if i <= 3 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(IngestError::MalformedHeader(format!(
                "dim[{i}] = {d}; only 3D volumes are supported"
            )));
        }
    }

    let datatype = Datatype::from_code(f.i16_at(offsets::DATATYPE))?;
    let bitpix = f.i16_at(offsets::BITPIX);
    if bitpix as usize != datatype.bytes_per_voxel() * 8 {
        return Err(IngestError::MalformedHeader(format!(
            "bitpix {bitpix} disagrees with datatype {datatype:?}"
        )));
    }

    let spacing = [
        f.f32_at(offsets::PIXDIM + 4),
        f.f32_at(offsets::PIXDIM + 8),
        f.f32_at(offsets::PIXDIM + 12),
    ];
    let vox_offset = f.f32_at(offsets::VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(IngestError::MalformedHeader(format!(
            "vox_offset {vox_offset} lies inside the header"
        )));
    }

    Ok(VolumeMeta {
        dims,
        datatype,
        voxel_spacing: spacing,
        vox_offset: vox_offset as usize,
        endian,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn datatype(&self) -> Datatype {
        match self {
            VoxelData::U8(_) => Datatype::U8,
            VoxelData::I16(_) => Datatype::I16,
            VoxelData::F32(_) => Datatype::F32,
        }
    }

    pub fn get_f64(&self, idx: usize) -> f64 {
        match self {
            VoxelData::U8(v) => v[idx] as f64,
            VoxelData::I16(v) => v[idx] as f64,
            VoxelData::F32(v) => v[idx] as f64,
        }
    }
}

/// A 3D volume stored x-fastest (`idx = x + nx * (y + ny * z)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub meta: VolumeMeta,
    pub data: VoxelData,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: VoxelData) -> Result<Self, IngestError> {
        if dims.iter().product::<usize>() != data.len() || dims.contains(&0) {
            return Err(IngestError::DimMismatch {
                dims,
                actual: data.len(),
            });
        }
        Ok(Volume {
            meta: VolumeMeta {
                dims,
                datatype: data.datatype(),
                voxel_spacing: [1.0; 3],
                vox_offset: DEFAULT_VOX_OFFSET,
                endian: Endian::Little,
            },
            data,
        })
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, IngestError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| IngestError::MalformedHeader(format!("gzip stream: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parse a complete `.nii` or `.nii.gz` file image.
pub fn read_volume(bytes: &[u8]) -> Result<Volume, IngestError> {
    let bytes = maybe_gunzip(bytes)?;
    let meta = parse_volume_header(&bytes)?;
    let end = meta.vox_offset + meta.payload_len();
    if bytes.len() < end {
        return Err(IngestError::TruncatedInput {
            needed: end,
            available: bytes.len(),
        });
    }
    let payload = &bytes[meta.vox_offset..end];
    let data = match meta.datatype {
        Datatype::U8 => VoxelData::U8(payload.to_vec()),
        Datatype::I16 => VoxelData::I16(
            payload
                .chunks_exact(2)
                .map(|c| match meta.endian {
                    Endian::Little => i16::from_le_bytes([c[0], c[1]]),
                    Endian::Big => i16::from_be_bytes([c[0], c[1]]),
                })
                .collect(),
        ),
        Datatype::F32 => VoxelData::F32(
            payload
                .chunks_exact(4)
                .map(|c| {
                    let b = [c[0], c[1], c[2], c[3]];
                    match meta.endian {
                        Endian::Little => f32::from_le_bytes(b),
                        Endian::Big => f32::from_be_bytes(b),
                    }
                })
                .collect(),
        ),
    };
    Ok(Volume { meta, data })
}

/// Serialize as a little-endian single-file NIfTI-1 image.
pub fn write_volume(vol: &Volume) -> Vec<u8> {
    let mut out = vec![0u8; DEFAULT_VOX_OFFSET];
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let put_i16 = |out: &mut Vec<u8>, off: usize, v: i16| {
        out[off..off + 2].copy_from_slice(&v.to_le_bytes())
    };
    let put_f32 = |out: &mut Vec<u8>, off: usize, v: f32| {
        out[off..off + 4].copy_from_slice(&v.to_le_bytes())
    };
    put_i16(&mut out, offsets::DIM, 3);
    for (i, &d) in vol.meta.dims.iter().enumerate() {
        put_i16(&mut out, offsets::DIM + 2 * (i + 1), d as i16);
    }
    for i in 4..8 {
        put_i16(&mut out, offsets::DIM + 2 * i, 1);
    }
    let dt = vol.data.datatype();
    put_i16(&mut out, offsets::DATATYPE, dt.code());
    put_i16(&mut out, offsets::BITPIX, (dt.bytes_per_voxel() * 8) as i16);
    put_f32(&mut out, offsets::PIXDIM, 1.0);
    for (i, &s) in vol.meta.voxel_spacing.iter().enumerate() {
        put_f32(&mut out, offsets::PIXDIM + 4 * (i + 1), s);
    }
    put_f32(&mut out, offsets::VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    // scl_slope = 1
    put_f32(&mut out, 112, 1.0);
    out[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");
    match &vol.data {
        VoxelData::U8(v) => out.extend_from_slice(v),
        VoxelData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VoxelData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}
