//! 8-bit binary PGM (P5) export.

use std::path::Path;

use super::{write_file, IoError};
use crate::grid::ImageGrid;

/// Maps `[min, max]` linearly onto `0..=255`, clamping outside values and
/// rounding half up, so the window midpoint becomes 128.
pub fn encode_pgm(grid: &ImageGrid, range: (f32, f32)) -> Result<Vec<u8>, IoError> {
    let (min, max) = range;
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(IoError::BadRange { min, max });
    }
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    let span = max as f64 - min as f64;
    out.extend(grid.values().iter().map(|&v| {
        let t = ((v as f64 - min as f64) / span).clamp(0.0, 1.0);
        (t * 255.0 + 0.5).floor() as u8
    }));
    Ok(out)
}

pub fn export_pgm(grid: &ImageGrid, path: &Path, range: (f32, f32)) -> Result<(), IoError> {
    write_file(path, &encode_pgm(grid, range)?)
}
