//! Minimal NIfTI-1 reader: uncompressed single-file `.nii`, int16 or
//! float32 voxels, 2D or 3D.
//!
//! Header fields used (byte offsets): `sizeof_hdr` 0 (must be 348, also
//! selects endianness), `dim` 40, `datatype` 70, `bitpix` 72, `vox_offset`
//! 108, `scl_slope` 112, `scl_inter` 116, `magic` 344 (`"n+1\0"`).

use std::path::Path;

use super::{magic_string, read_file, IoError};
use crate::grid::{ImageGrid, Units};

const HEADER_LEN: usize = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Clone, Copy)]
struct Endian(bool);

impl Endian {
    fn i16(self, b: &[u8], at: usize) -> i16 {
        let a = [b[at], b[at + 1]];
        if self.0 {
            i16::from_be_bytes(a)
        } else {
            i16::from_le_bytes(a)
        }
    }

    fn f32(self, b: &[u8], at: usize) -> f32 {
        let a = b[at..at + 4].try_into().expect("4 bytes");
        if self.0 {
            f32::from_be_bytes(a)
        } else {
            f32::from_le_bytes(a)
        }
    }
}

/// Decodes slices along `slice_axis` (0, 1 or 2) in index order. Each slice
/// has the higher remaining axis as rows and the lower one as columns.
/// Values are rescaled to HU with `scl_slope`/`scl_inter` (a zero slope
/// means no scaling).
pub fn decode_nifti(bytes: &[u8], slice_axis: usize) -> Result<Vec<ImageGrid>, IoError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(IoError::CompressedInput);
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let endian = match (
        i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")),
        i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")),
    ) {
        (348, _) => Endian(false),
        (_, 348) => Endian(true),
        _ => return Err(IoError::BadNiftiHeader("sizeof_hdr must be 348".into())),
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(IoError::BadNiftiMagic(magic_string(&bytes[344..348])));
    }
    let ndim = endian.i16(bytes, 40);
    if !(2..=3).contains(&ndim) {
        return Err(IoError::BadNiftiHeader(format!(
            "expected 2 or 3 dimensions, got {ndim}"
        )));
    }
    let mut dims = [1usize; 3];
    for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = endian.i16(bytes, 42 + 2 * i);
        if v < 1 {
            return Err(IoError::BadNiftiHeader(format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    if slice_axis > 2 {
        return Err(IoError::BadNiftiHeader(format!(
            "slice axis {slice_axis} is not 0, 1 or 2"
        )));
    }
    let datatype = endian.i16(bytes, 70);
    let width = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(IoError::UnsupportedDatatype(other)),
    };
    let vox_offset = endian.f32(bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(IoError::BadNiftiHeader(format!("vox_offset {vox_offset}")));
    }
    let mut slope = endian.f32(bytes, 112);
    let inter = endian.f32(bytes, 116);
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let n = dims[0] * dims[1] * dims[2];
    let start = vox_offset as usize;
    let need = start + n * width;
    if bytes.len() < need {
        return Err(IoError::TruncatedPayload {
            expected: need,
            actual: bytes.len(),
        });
    }
    let data = &bytes[start..need];
    let voxel = |i: usize| -> f32 {
        let raw = match datatype {
            DT_INT16 => endian.i16(data, 2 * i) as f32,
            _ => endian.f32(data, 4 * i),
        };
        raw * slope + inter
    };

    let (row_axis, col_axis) = match slice_axis {
        0 => (2, 1),
        1 => (2, 0),
        _ => (1, 0),
    };
    let stride = [1, dims[0], dims[0] * dims[1]];
    let (rows, cols) = (dims[row_axis], dims[col_axis]);
    (0..dims[slice_axis])
        .map(|s| {
            let values: Vec<f32> = (0..rows * cols)
                .map(|p| voxel(s * stride[slice_axis] + (p / cols) * stride[row_axis] + (p % cols) * stride[col_axis]))
                .collect();
            Ok(ImageGrid::new(rows, cols, values, Units::Hu)?)
        })
        .collect()
}

pub fn import_nifti(path: &Path, slice_axis: usize) -> Result<Vec<ImageGrid>, IoError> {
    decode_nifti(&read_file(path)?, slice_axis)
}

/// Builds a minimal little-endian NIfTI-1 file; used by tests and examples.
pub fn build_nifti_bytes(dims: &[usize], datatype: i16, slope: f32, inter: f32, payload: &[u8]) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[40..42].copy_from_slice(&(dims.len() as i16).to_le_bytes());
    for (i, &d) in dims.iter().enumerate() {
        h[42 + 2 * i..44 + 2 * i].copy_from_slice(&(d as i16).to_le_bytes());
    }
    let bitpix: i16 = if datatype == DT_INT16 { 16 } else { 32 };
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    h[108..112].copy_from_slice(&352f32.to_le_bytes());
    h[112..116].copy_from_slice(&slope.to_le_bytes());
    h[116..120].copy_from_slice(&inter.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(payload);
    h
}
