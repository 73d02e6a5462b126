//! Image and mask grids, intensity normalization and center cropping.
//!
//! Every grid is a single 2D slice stored row-major: pixel `(row, col)` lives
//! at `row * width + col`. Volumes are represented as ordered lists of slices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be at least 1x1, got {height}x{width}")]
    EmptyShape { height: usize, width: usize },
    #[error("expected {expected} values for the given shape, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("normalized value {value} at index {index} is outside [-1, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("mask value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: f32 },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("crop {out_h}x{out_w} does not fit inside {height}x{width}")]
    CropTooLarge {
        out_h: usize,
        out_w: usize,
        height: usize,
        width: usize,
    },
    #[error("expected {expected:?} units, got {actual:?}")]
    UnitMismatch { expected: Units, actual: Units },
    #[error("normalization window requires hu_min < hu_max, got ({hu_min}, {hu_max})")]
    BadWindow { hu_min: f32, hu_max: f32 },
}

/// Intensity units carried by an [`ImageGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Hu,
    Normalized,
}

/// Height and width of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Self {
        Shape { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(self) -> Result<Self, GridError> {
        if self.height == 0 || self.width == 0 {
            return Err(GridError::EmptyShape {
                height: self.height,
                width: self.width,
            });
        }
        Ok(self)
    }

    pub(crate) fn ensure_same(self, other: Shape) -> Result<(), GridError> {
        if self != other {
            return Err(GridError::ShapeMismatch {
                left: (self.height, self.width),
                right: (other.height, other.width),
            });
        }
        Ok(())
    }
}

/// A scalar field over one slice: CT, CBCT, sCT or an interval bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    shape: Shape,
    values: Vec<f32>,
    units: Units,
}

impl ImageGrid {
    /// Builds a grid, checking finiteness and the `[-1, 1]` bound for
    /// normalized data.
    pub fn new(height: usize, width: usize, values: Vec<f32>, units: Units) -> Result<Self, GridError> {
        let shape = Shape::new(height, width).check()?;
        if values.len() != shape.len() {
            return Err(GridError::LengthMismatch {
                expected: shape.len(),
                actual: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(GridError::NonFinite { index, value });
            }
            if units == Units::Normalized && !(-1.0..=1.0).contains(&value) {
                return Err(GridError::OutOfRange { index, value });
            }
        }
        Ok(ImageGrid { shape, values, units })
    }

    pub fn filled(height: usize, width: usize, value: f32, units: Units) -> Result<Self, GridError> {
        Self::new(height, width, vec![value; height * width], units)
    }

    /// Internal constructor for values already known to satisfy the invariants.
    pub(crate) fn from_parts(shape: Shape, values: Vec<f32>, units: Units) -> Self {
        debug_assert_eq!(shape.len(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ImageGrid { shape, values, units }
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.shape.width + col]
    }

    pub(crate) fn require_units(&self, expected: Units) -> Result<(), GridError> {
        if self.units != expected {
            return Err(GridError::UnitMismatch {
                expected,
                actual: self.units,
            });
        }
        Ok(())
    }

    /// Applies `f` pixel-wise, producing a grid in `units`. Fails if the
    /// result violates the grid invariants.
    pub fn map(&self, units: Units, f: impl Fn(f32) -> f32) -> Result<ImageGrid, GridError> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        ImageGrid::new(self.shape.height, self.shape.width, values, units)
    }

    /// Returns the grid expressed in HU, converting through `spec` when it is
    /// normalized.
    pub fn to_hu(&self, spec: &NormalizationSpec) -> ImageGrid {
        match self.units {
            Units::Hu => self.clone(),
            Units::Normalized => denormalize(self, spec).expect("units checked"),
        }
    }

    /// Returns the grid in normalized units, converting through `spec` when
    /// it is in HU.
    pub fn to_normalized(&self, spec: &NormalizationSpec) -> ImageGrid {
        match self.units {
            Units::Normalized => self.clone(),
            Units::Hu => normalize(self, spec).expect("units checked"),
        }
    }
}

/// A `{0, 1}` mask over one slice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    shape: Shape,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, GridError> {
        let shape = Shape::new(height, width).check()?;
        if bits.len() != shape.len() {
            return Err(GridError::LengthMismatch {
                expected: shape.len(),
                actual: bits.len(),
            });
        }
        Ok(BinaryMask { shape, bits })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self, GridError> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn full(height: usize, width: usize) -> Result<Self, GridError> {
        Self::new(height, width, vec![true; height * width])
    }

    /// Parses a mask from `0.0`/`1.0` floats.
    pub fn from_f32(height: usize, width: usize, values: &[f32]) -> Result<Self, GridError> {
        let mut bits = Vec::with_capacity(values.len());
        for (index, &value) in values.iter().enumerate() {
            if value == 0.0 {
                bits.push(false);
            } else if value == 1.0 {
                bits.push(true);
            } else {
                return Err(GridError::NotBinary { index, value });
            }
        }
        Self::new(height, width, bits)
    }

    pub(crate) fn from_parts(shape: Shape, bits: Vec<bool>) -> Self {
        debug_assert_eq!(shape.len(), bits.len());
        BinaryMask { shape, bits }
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.shape.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask, GridError> {
        self.shape.ensure_same(other.shape)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask::from_parts(self.shape, bits))
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask, GridError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask, GridError> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Set difference `self \ other`.
    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask, GridError> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask::from_parts(self.shape, self.bits.iter().map(|&b| !b).collect())
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Linear HU window mapped onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSpec {
    pub hu_min: f32,
    pub hu_max: f32,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            hu_min: -1000.0,
            hu_max: 2000.0,
        }
    }
}

impl NormalizationSpec {
    pub fn new(hu_min: f32, hu_max: f32) -> Result<Self, GridError> {
        let spec = NormalizationSpec { hu_min, hu_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.hu_min.is_finite() && self.hu_max.is_finite() && self.hu_min < self.hu_max) {
            return Err(GridError::BadWindow {
                hu_min: self.hu_min,
                hu_max: self.hu_max,
            });
        }
        Ok(())
    }

    /// HU per normalized unit.
    pub fn half_range(&self) -> f64 {
        (self.hu_max as f64 - self.hu_min as f64) / 2.0
    }

    pub fn normalize_value(&self, hu: f32) -> f32 {
        let range = self.hu_max as f64 - self.hu_min as f64;
        let v = 2.0 * (hu as f64 - self.hu_min as f64) / range - 1.0;
        v.clamp(-1.0, 1.0) as f32
    }

    pub fn denormalize_value(&self, v: f32) -> f32 {
        (self.hu_min as f64 + (v as f64 + 1.0) * self.half_range()) as f32
    }
}

/// Maps an HU grid onto `[-1, 1]`, clamping values outside the window.
pub fn normalize(grid: &ImageGrid, spec: &NormalizationSpec) -> Result<ImageGrid, GridError> {
    grid.require_units(Units::Hu)?;
    let values = grid.values.iter().map(|&v| spec.normalize_value(v)).collect();
    Ok(ImageGrid::from_parts(grid.shape, values, Units::Normalized))
}

pub fn denormalize(grid: &ImageGrid, spec: &NormalizationSpec) -> Result<ImageGrid, GridError> {
    grid.require_units(Units::Normalized)?;
    let values = grid.values.iter().map(|&v| spec.denormalize_value(v)).collect();
    Ok(ImageGrid::from_parts(grid.shape, values, Units::Hu))
}

fn crop_offsets(shape: Shape, out_h: usize, out_w: usize) -> Result<(usize, usize), GridError> {
    if out_h == 0 || out_w == 0 || out_h > shape.height || out_w > shape.width {
        return Err(GridError::CropTooLarge {
            out_h,
            out_w,
            height: shape.height,
            width: shape.width,
        });
    }
    Ok(((shape.height - out_h) / 2, (shape.width - out_w) / 2))
}

fn crop_vec<T: Copy>(src: &[T], width: usize, off: (usize, usize), out_h: usize, out_w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for row in off.0..off.0 + out_h {
        let start = row * width + off.1;
        out.extend_from_slice(&src[start..start + out_w]);
    }
    out
}

/// Centered `out_h x out_w` window; the offset on each axis is
/// `floor((dim - out) / 2)`.
pub fn crop_center(grid: &ImageGrid, out_h: usize, out_w: usize) -> Result<ImageGrid, GridError> {
    let off = crop_offsets(grid.shape, out_h, out_w)?;
    let values = crop_vec(&grid.values, grid.shape.width, off, out_h, out_w);
    Ok(ImageGrid::from_parts(Shape::new(out_h, out_w), values, grid.units))
}

/// Mask counterpart of [`crop_center`], using identical offsets.
pub fn crop_center_mask(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask, GridError> {
    let off = crop_offsets(mask.shape, out_h, out_w)?;
    let bits = crop_vec(&mask.bits, mask.shape.width, off, out_h, out_w);
    Ok(BinaryMask::from_parts(Shape::new(out_h, out_w), bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hu(h: usize, w: usize, values: Vec<f32>) -> ImageGrid {
        ImageGrid::new(h, w, values, Units::Hu).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        let spec = NormalizationSpec::default();
        let g = hu(1, 4, vec![-1000.0, 500.0, 3500.0, -5000.0]);
        let n = normalize(&g, &spec).unwrap();
        assert_eq!(n.values(), &[-1.0, 0.0, 1.0, -1.0]);
        assert_eq!(n.units(), Units::Normalized);
    }

    #[test]
    fn denormalize_midpoint_and_scale() {
        let spec = NormalizationSpec::default();
        let n = ImageGrid::new(1, 2, vec![0.0, 0.01], Units::Normalized).unwrap();
        let h = denormalize(&n, &spec).unwrap();
        assert_eq!(h.values()[0], 500.0);
        assert!((h.values()[1] - h.values()[0] - 15.0).abs() < 1e-3);
    }

    #[test]
    fn normalize_rejects_normalized_input() {
        let n = ImageGrid::filled(2, 2, 0.0, Units::Normalized).unwrap();
        assert!(matches!(
            normalize(&n, &NormalizationSpec::default()),
            Err(GridError::UnitMismatch { .. })
        ));
    }

    #[test]
    fn grid_invariants() {
        assert!(ImageGrid::new(0, 3, vec![], Units::Hu).is_err());
        assert!(ImageGrid::new(1, 2, vec![0.0], Units::Hu).is_err());
        assert!(ImageGrid::new(1, 1, vec![f32::NAN], Units::Hu).is_err());
        assert!(ImageGrid::new(1, 1, vec![1.5], Units::Normalized).is_err());
        assert!(ImageGrid::new(1, 1, vec![1.5], Units::Hu).is_ok());
        assert!(NormalizationSpec::new(10.0, 10.0).is_err());
    }

    #[test]
    fn crop_identity_and_offsets() {
        let g = hu(4, 4, (0..16).map(|v| v as f32).collect());
        assert_eq!(crop_center(&g, 4, 4).unwrap(), g);

        let g = hu(5, 5, (0..25).map(|v| v as f32).collect());
        let c = crop_center(&g, 3, 3).unwrap();
        assert_eq!(c.values(), &[6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]);

        let big = hu(512, 512, (0..512 * 512).map(|v| v as f32).collect());
        let c = crop_center(&big, 416, 416).unwrap();
        assert_eq!(c.get(0, 0), (48 * 512 + 48) as f32);

        assert!(matches!(crop_center(&g, 6, 3), Err(GridError::CropTooLarge { .. })));
    }

    #[test]
    fn mask_crop_uses_same_offsets() {
        let g = hu(7, 6, (0..42).map(|v| v as f32).collect());
        let m = BinaryMask::new(7, 6, (0..42).map(|v| v % 3 == 0).collect()).unwrap();
        let cg = crop_center(&g, 4, 3).unwrap();
        let cm = crop_center_mask(&m, 4, 3).unwrap();
        for (v, b) in cg.values().iter().zip(cm.bits()) {
            assert_eq!((*v as usize) % 3 == 0, *b);
        }
    }

    #[test]
    fn mask_from_f32_rejects_non_binary() {
        assert!(BinaryMask::from_f32(1, 2, &[0.0, 0.5]).is_err());
        let m = BinaryMask::from_f32(1, 2, &[0.0, 1.0]).unwrap();
        assert_eq!(m.count(), 1);
    }

    proptest! {
        #[test]
        fn normalized_values_bounded_and_monotone(
            mut vals in proptest::collection::vec(-4000.0f32..6000.0, 1..64)
        ) {
            let spec = NormalizationSpec::default();
            vals.sort_by(f32::total_cmp);
            let n = normalize(&hu(1, vals.len(), vals.clone()), &spec).unwrap();
            prop_assert!(n.values().iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!(n.values().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn round_trip_inside_window(v in -1000.0f32..2000.0) {
            let spec = NormalizationSpec::default();
            let back = spec.denormalize_value(spec.normalize_value(v));
            prop_assert!((back - v).abs() <= 1e-4, "{} -> {}", v, back);
        }
    }
}
