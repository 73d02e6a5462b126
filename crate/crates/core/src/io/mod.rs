//! On-disk formats. All multi-byte integers and floats are little-endian.

pub mod calibration;
pub mod manifest;
pub mod nifti;
pub mod pgm;
pub mod report;
pub mod volume;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::ManifestError;
use crate::grid::GridError;

pub use calibration::{
    decode_calibration, encode_calibration, read_calibration, write_calibration, Calibration, CalibrationArtifact,
    Method,
};
pub use manifest::{read_manifest, resolve_path, write_manifest};
pub use nifti::{decode_nifti, import_nifti};
pub use pgm::{encode_pgm, export_pgm};
pub use volume::{decode_volume, encode_volume, read_grid, read_mask, read_volume, write_volume, Volume};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("unknown units code {0}")]
    BadUnits(u8),
    #[error("expected a {expected} volume, found a {found} volume")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("manifest csv: {0}")]
    Csv(String),
    #[error("unknown calibration method id {0}")]
    UnknownMethod(u8),
    #[error("method {method} does not match the stored payload kind")]
    MethodPayloadMismatch { method: u8 },
    #[error("calibration digest mismatch: file is corrupt or was modified")]
    DigestMismatch,
    #[error("not a NIfTI-1 single file (magic {0:?})")]
    BadNiftiMagic(String),
    #[error("gzip-compressed input is not supported; decompress first")]
    CompressedInput,
    #[error("unsupported NIfTI datatype {0}")]
    UnsupportedDatatype(i16),
    #[error("invalid NIfTI header: {0}")]
    BadNiftiHeader(String),
    #[error("invalid window: min {min} must be below max {max}")]
    BadRange { min: f32, max: f32 },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(IoError::TruncatedPayload {
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            }),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, IoError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<(), IoError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(IoError::TrailingData(n)),
        }
    }
}

pub(crate) fn magic_string(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}
