//! Slicing 3D volumes into 2D planes and back.
//!
//! Plane geometry per axis, for a volume of dims `(nx, ny, nz)`:
//!
//! | axis | plane size (w × h) | pixel `(col, row)` |
//! |------|--------------------|--------------------|
//! | 0    | ny × nz            | (y, z)             |
//! | 1    | nx × nz            | (x, z)             |
//! | 2    | nx × ny            | (x, y)             |

use crate::error::IngestError;

use super::nifti::{Volume, VoxelData};
use super::raster::{MaskRaster, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub axis: usize,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub data: VoxelData,
}

fn plane_dims(dims: [usize; 3], axis: usize) -> (usize, usize) {
    match axis {
        0 => (dims[1], dims[2]),
        1 => (dims[0], dims[2]),
        _ => (dims[0], dims[1]),
    }
}

/// Volume index of pixel `(col, row)` of plane `index` along `axis`.
fn voxel_index(dims: [usize; 3], axis: usize, index: usize, col: usize, row: usize) -> usize {
    let (x, y, z) = match axis {
        0 => (index, col, row),
        1 => (col, index, row),
        _ => (col, row, index),
    };
    x + dims[0] * (y + dims[1] * z)
}

fn gather<T: Copy>(src: &[T], dims: [usize; 3], axis: usize, index: usize) -> Vec<T> {
    let (w, h) = plane_dims(dims, axis);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            out.push(src[voxel_index(dims, axis, index, col, row)]);
        }
    }
    out
}

pub fn slice_volume(vol: &Volume, axis: usize) -> Result<Vec<Slice>, IngestError> {
    if axis > 2 {
        return Err(IngestError::InvalidAxis(axis));
    }
    let dims = vol.meta.dims;
    if dims.iter().product::<usize>() != vol.data.len() {
        return Err(IngestError::DimMismatch {
            dims,
            actual: vol.data.len(),
        });
    }
    let (width, height) = plane_dims(dims, axis);
    Ok((0..dims[axis])
        .map(|index| {
            let data = match &vol.data {
                VoxelData::U8(v) => VoxelData::U8(gather(v, dims, axis, index)),
                VoxelData::I16(v) => VoxelData::I16(gather(v, dims, axis, index)),
                VoxelData::F32(v) => VoxelData::F32(gather(v, dims, axis, index)),
            };
            Slice {
                axis,
                index,
                width,
                height,
                data,
            }
        })
        .collect())
}

fn scatter<T: Copy + Default>(
    slices: &[Slice],
    dims: [usize; 3],
    axis: usize,
    pick: impl Fn(&VoxelData) -> Option<&Vec<T>>,
) -> Result<Vec<T>, IngestError> {
    let mut out = vec![T::default(); dims.iter().product()];
    let (w, h) = plane_dims(dims, axis);
    for s in slices {
        let data = pick(&s.data).ok_or(IngestError::DimMismatch {
            dims,
            actual: s.data.len(),
        })?;
        if s.index >= dims[axis] || data.len() != w * h {
            return Err(IngestError::DimMismatch {
                dims,
                actual: data.len(),
            });
        }
        for row in 0..h {
            for col in 0..w {
                out[voxel_index(dims, axis, s.index, col, row)] = data[col + w * row];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`slice_volume`]: place each slice back at its index.
pub fn stack_slices(slices: &[Slice], axis: usize, dims: [usize; 3]) -> Result<VoxelData, IngestError> {
    if axis > 2 {
        return Err(IngestError::InvalidAxis(axis));
    }
    if slices.len() != dims[axis] {
        return Err(IngestError::DimMismatch {
            dims,
            actual: slices.len(),
        });
    }
    let first = slices.first().ok_or(IngestError::DimMismatch { dims, actual: 0 })?;
    Ok(match &first.data {
        VoxelData::U8(_) => VoxelData::U8(scatter(slices, dims, axis, |d| match d {
            VoxelData::U8(v) => Some(v),
            _ => None,
        })?),
        VoxelData::I16(_) => VoxelData::I16(scatter(slices, dims, axis, |d| match d {
            VoxelData::I16(v) => Some(v),
            _ => None,
        })?),
        VoxelData::F32(_) => VoxelData::F32(scatter(slices, dims, axis, |d| match d {
            VoxelData::F32(v) => Some(v),
            _ => None,
        })?),
    })
}

/// `<volume>_ax<k>_<index>`.
pub fn slice_name(volume: &str, axis: usize, index: usize) -> String {
    format!("{volume}_ax{axis}_{index:04}")
}

/// Recover `(volume, axis, index)` from a [`slice_name`].
pub fn parse_slice_name(name: &str) -> Option<(String, usize, usize)> {
    let (rest, index) = name.rsplit_once('_')?;
    let (volume, axis) = rest.rsplit_once("_ax")?;
    let axis: usize = axis.parse().ok()?;
    if axis > 2 || volume.is_empty() {
        return None;
    }
    Some((volume.to_string(), axis, index.parse().ok()?))
}

/// Per-slice min-max window onto `[0, 255]`; a constant slice maps to 0.
pub fn window_to_gray8(s: &Slice) -> Raster {
    let n = s.data.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let v = s.data.get_f64(i);
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    let data = (0..n)
        .map(|i| {
            let v = s.data.get_f64(i);
            if span.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !v.is_finite() {
                0
            } else {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    Raster::gray8(s.width as u32, s.height as u32, data)
}

/// Interpret a label-volume slice as mask values; negative or fractional
/// voxels are rejected.
pub fn slice_to_mask(s: &Slice) -> Result<MaskRaster, String> {
    let values = (0..s.data.len())
        .map(|i| {
            let v = s.data.get_f64(i);
            if v < 0.0 || v > u16::MAX as f64 || v.fract() != 0.0 {
                Err(format!("label voxel {v} is not a small non-negative integer"))
            } else {
                Ok(v as u16)
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(MaskRaster {
        width: s.width as u32,
        height: s.height as u32,
        values,
    })
}
