//! Single-slice volume container.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "CTVOL001"
//!      8     4  version (u32) = 1
//!     12     4  height (u32)
//!     16     4  width (u32)
//!     20     1  units: 0 normalized, 1 HU, 2 mask
//!     21     3  reserved, zero
//!     24   4·h·w payload, f32 row-major
//! ```

use std::path::Path;

use super::{magic_string, read_file, write_file, IoError, Reader};
use crate::grid::{BinaryMask, ImageGrid, Units};

pub const VOLUME_MAGIC: &[u8; 8] = b"CTVOL001";
pub const VOLUME_VERSION: u32 = 1;
pub const VOLUME_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Grid(ImageGrid),
    Mask(BinaryMask),
}

impl Volume {
    fn kind(&self) -> &'static str {
        match self {
            Volume::Grid(_) => "grid",
            Volume::Mask(_) => "mask",
        }
    }
}

impl From<ImageGrid> for Volume {
    fn from(g: ImageGrid) -> Self {
        Volume::Grid(g)
    }
}

impl From<BinaryMask> for Volume {
    fn from(m: BinaryMask) -> Self {
        Volume::Mask(m)
    }
}

pub fn encode_volume(volume: &Volume) -> Vec<u8> {
    let (shape, code) = match volume {
        Volume::Grid(g) => (
            g.shape(),
            match g.units() {
                Units::Normalized => 0u8,
                Units::Hu => 1,
            },
        ),
        Volume::Mask(m) => (m.shape(), 2),
    };
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN + 4 * shape.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.height as u32).to_le_bytes());
    out.extend_from_slice(&(shape.width as u32).to_le_bytes());
    out.push(code);
    out.extend_from_slice(&[0; 3]);
    match volume {
        Volume::Grid(g) => g.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Volume::Mask(m) => m
            .bits()
            .iter()
            .for_each(|&b| out.extend_from_slice(&(if b { 1.0f32 } else { 0.0 }).to_le_bytes())),
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume, IoError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8)?;
    if magic != VOLUME_MAGIC {
        return Err(IoError::BadMagic {
            expected: "CTVOL001",
            found: magic_string(magic),
        });
    }
    let version = r.u32()?;
    if version != VOLUME_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let code = r.u8()?;
    let reserved = r.take(3)?;
    if code > 2 {
        return Err(IoError::BadUnits(code));
    }
    if reserved != [0, 0, 0] {
        return Err(IoError::InvalidPayload("reserved header bytes must be zero".into()));
    }
    let n = height
        .checked_mul(width)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| IoError::InvalidPayload(format!("dimensions {height}x{width} overflow")))?;
    if r.remaining() < 4 * n {
        return Err(IoError::TruncatedPayload {
            expected: VOLUME_HEADER_LEN + 4 * n,
            actual: bytes.len(),
        });
    }
    let values: Vec<f32> = (0..n).map(|_| r.f32()).collect::<Result<_, _>>()?;
    r.finish()?;
    match code {
        2 => Ok(Volume::Mask(BinaryMask::from_f32(height, width, &values)?)),
        c => {
            let units = if c == 0 { Units::Normalized } else { Units::Hu };
            Ok(Volume::Grid(ImageGrid::new(height, width, values, units)?))
        }
    }
}

pub fn write_volume(path: &Path, volume: &Volume) -> Result<(), IoError> {
    write_file(path, &encode_volume(volume))
}

pub fn read_volume(path: &Path) -> Result<Volume, IoError> {
    decode_volume(&read_file(path)?)
}

pub fn read_grid(path: &Path) -> Result<ImageGrid, IoError> {
    match read_volume(path)? {
        Volume::Grid(g) => Ok(g),
        v => Err(IoError::WrongKind {
            expected: "grid",
            found: v.kind(),
        }),
    }
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, IoError> {
    match read_volume(path)? {
        Volume::Mask(m) => Ok(m),
        v => Err(IoError::WrongKind {
            expected: "mask",
            found: v.kind(),
        }),
    }
}
