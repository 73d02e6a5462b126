//! Pixel-wise conformal calibration.
//!
//! Two families are provided:
//!
//! - split conformal ([`scp`]): absolute-error scores per pixel, a per-pixel
//!   order statistic `q̂` and symmetric intervals `[Ŷ - q̂, Ŷ + q̂]`;
//! - conformal risk control ([`crc`]): heuristic bounds from an ensemble of
//!   samples, widened additively by a single scalar `λ̂` chosen so that the
//!   calibrated miscoverage risk stays below `α`.
//!
//! Both accept a patient-level adjustment that replaces the `+1` of the
//! finite-sample correction by `n_p = n_c / P`, the average number of slices
//! per patient, which is the right exchangeable unit when slices of one
//! patient are correlated.
//!
//! All intervals live in normalized intensity space and are intersected with
//! `[-1, 1]` only at prediction time.

pub mod crc;
pub mod scp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, ImageGrid, Shape, Units};

pub use crc::{calibrate_pw_crc, miscoverage_risk, predict_crc, CrcCalibration, CrcItem, CrcOptions, LossAggregation};
pub use scp::{
    calibrate_pw_scp, calibrate_pw_scp_pairs, predict_scp, scp_rank, GridScoreStack, PairScoreStack, Quantiles, Rank,
    ScoreStack, ScpCalibration, ScpOptions, ScpPair,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("evaluation mask is empty")]
    EmptyMask,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid quantile levels ({q_lo}, {q_hi})")]
    BadQuantiles { q_lo: f64, q_hi: f64 },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("need at least one patient")]
    NoPatients,
    #[error("CRC is infeasible: {0}")]
    Infeasible(Feasibility),
    #[error("lower bound exceeds upper bound at pixel {0}")]
    InvertedInterval(usize),
    #[error("score source failed: {0}")]
    Source(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Why a CRC problem cannot be solved and what would fix it.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub n_c: usize,
    pub patients: usize,
    pub adjusted: bool,
    /// Smallest calibration count that makes the base problem feasible.
    pub min_n_c: Option<usize>,
    /// Smallest patient count that makes the adjusted problem feasible.
    pub min_patients: Option<usize>,
}

impl std::fmt::Display for Feasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.min_n_c, self.min_patients) {
            (Some(n), _) => write!(f, "n_c = {} is too small; need n_c >= {n}", self.n_c),
            (_, Some(p)) => write!(
                f,
                "P = {} patients is too few for the adjusted bound; need P >= {p}",
                self.patients
            ),
            _ => write!(f, "n_c = {}, P = {}", self.n_c, self.patients),
        }
    }
}

/// Which pixels count when evaluating or calibrating risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMaskPolicy {
    #[default]
    Body,
    Full,
}

impl EvalMaskPolicy {
    pub fn code(self) -> u8 {
        match self {
            EvalMaskPolicy::Body => 0,
            EvalMaskPolicy::Full => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EvalMaskPolicy::Body),
            1 => Some(EvalMaskPolicy::Full),
            _ => None,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::BadAlpha(alpha));
    }
    Ok(())
}

/// `⌈x⌉` that ignores floating-point noise of a few ulps above an integer,
/// so that e.g. `0.9 * 110` yields 99 rather than 100.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Per-pixel closed intervals `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalField {
    lower: ImageGrid,
    upper: ImageGrid,
}

impl IntervalField {
    pub fn new(lower: ImageGrid, upper: ImageGrid) -> Result<Self, ConformalError> {
        lower.shape().ensure_same(upper.shape())?;
        if lower.units() != upper.units() {
            return Err(GridError::UnitMismatch {
                expected: lower.units(),
                actual: upper.units(),
            }
            .into());
        }
        if let Some(p) = lower.values().iter().zip(upper.values()).position(|(l, u)| l > u) {
            return Err(ConformalError::InvertedInterval(p));
        }
        Ok(IntervalField { lower, upper })
    }

    /// The whole output range `[-1, 1]` at every pixel.
    pub fn full_range(shape: Shape) -> Self {
        IntervalField {
            lower: ImageGrid::from_parts(shape, vec![-1.0; shape.len()], Units::Normalized),
            upper: ImageGrid::from_parts(shape, vec![1.0; shape.len()], Units::Normalized),
        }
    }

    pub fn lower(&self) -> &ImageGrid {
        &self.lower
    }

    pub fn upper(&self) -> &ImageGrid {
        &self.upper
    }

    pub fn shape(&self) -> Shape {
        self.lower.shape()
    }

    pub fn units(&self) -> Units {
        self.lower.units()
    }

    /// `upper - lower` per pixel.
    pub fn widths(&self) -> impl Iterator<Item = f32> + '_ {
        self.lower.values().iter().zip(self.upper.values()).map(|(l, u)| u - l)
    }

    pub fn contains(&self, index: usize, y: f32) -> bool {
        self.lower.values()[index] <= y && y <= self.upper.values()[index]
    }
}

/// Absolute-error conformity scores `|Ŷ - Y|`.
pub fn conformity_scores(sct: &ImageGrid, ct: &ImageGrid) -> Result<Vec<f32>, ConformalError> {
    sct.shape().ensure_same(ct.shape())?;
    if sct.units() != ct.units() {
        return Err(GridError::UnitMismatch {
            expected: ct.units(),
            actual: sct.units(),
        }
        .into());
    }
    Ok(sct
        .values()
        .iter()
        .zip(ct.values())
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// 1-based order-statistic index `⌈q·K⌉` clamped to `[1, K]`.
fn sample_rank(q: f64, k: usize) -> usize {
    (ceil_tolerant(q * k as f64) as usize).clamp(1, k)
}

/// Per-pixel empirical quantiles of an ensemble. `(0, 1)` yields per-pixel
/// min/max.
pub fn heuristic_bounds(samples: &[ImageGrid], q_lo: f64, q_hi: f64) -> Result<IntervalField, ConformalError> {
    if samples.len() < 2 {
        return Err(ConformalError::TooFewSamples(samples.len()));
    }
    if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo >= q_hi {
        return Err(ConformalError::BadQuantiles { q_lo, q_hi });
    }
    let shape = samples[0].shape();
    let units = samples[0].units();
    for s in samples {
        shape.ensure_same(s.shape())?;
        if s.units() != units {
            return Err(GridError::UnitMismatch {
                expected: units,
                actual: s.units(),
            }
            .into());
        }
    }
    let k = samples.len();
    let (i_lo, i_hi) = (sample_rank(q_lo, k) - 1, sample_rank(q_hi, k) - 1);
    let mut lower = Vec::with_capacity(shape.len());
    let mut upper = Vec::with_capacity(shape.len());
    let mut column = vec![0f32; k];
    for p in 0..shape.len() {
        for (slot, s) in column.iter_mut().zip(samples) {
            *slot = s.values()[p];
        }
        column.sort_unstable_by(f32::total_cmp);
        lower.push(column[i_lo]);
        upper.push(column[i_hi]);
    }
    Ok(IntervalField {
        lower: ImageGrid::from_parts(shape, lower, units),
        upper: ImageGrid::from_parts(shape, upper, units),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f32]) -> ImageGrid {
        ImageGrid::new(1, v.len(), v.to_vec(), Units::Normalized).unwrap()
    }

    #[test]
    fn scores() {
        assert_eq!(
            conformity_scores(&g(&[0.3, 0.5]), &g(&[0.3, 0.5])).unwrap(),
            vec![0.0, 0.0]
        );
        let s = conformity_scores(&g(&[0.3]), &g(&[-0.1])).unwrap();
        assert!((s[0] - 0.4).abs() < 1e-7);
        assert_eq!(
            conformity_scores(&g(&[0.3, 0.1]), &g(&[-0.1, 0.9])).unwrap(),
            conformity_scores(&g(&[-0.1, 0.9]), &g(&[0.3, 0.1])).unwrap()
        );
        assert!(matches!(
            conformity_scores(&g(&[0.3]), &g(&[0.3, 0.1])),
            Err(ConformalError::Grid(GridError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn bounds_min_max_and_identical() {
        let b = heuristic_bounds(&[g(&[0.1]), g(&[0.4]), g(&[0.2])], 0.0, 1.0).unwrap();
        assert_eq!((b.lower().values()[0], b.upper().values()[0]), (0.1, 0.4));
        let same = heuristic_bounds(&vec![g(&[0.3, -0.2]); 4], 0.05, 0.95).unwrap();
        assert_eq!(same.lower(), same.upper());
        assert!(matches!(
            heuristic_bounds(&[g(&[0.1])], 0.0, 1.0),
            Err(ConformalError::TooFewSamples(1))
        ));
        assert!(heuristic_bounds(&[g(&[0.1]), g(&[0.2])], 0.6, 0.4).is_err());
    }

    #[test]
    fn bounds_order_statistic_index() {
        // K = 20 values 0..19; q = 0.05 -> index 1 (value 0), q = 0.95 -> 19 (value 18)
        let samples: Vec<_> = (0..20).map(|i| g(&[i as f32 / 20.0])).collect();
        let b = heuristic_bounds(&samples, 0.05, 0.95).unwrap();
        assert_eq!(b.lower().values()[0], 0.0);
        assert_eq!(b.upper().values()[0], 18.0 / 20.0);
    }

    #[test]
    fn widening_quantiles_never_shrinks() {
        let samples: Vec<_> = (0..9)
            .map(|i| g(&[((i * 7) % 9) as f32 / 10.0 - 0.4, (i as f32 / 10.0).sin()]))
            .collect();
        let narrow = heuristic_bounds(&samples, 0.3, 0.7).unwrap();
        let wide = heuristic_bounds(&samples, 0.1, 0.9).unwrap();
        for p in 0..2 {
            assert!(wide.lower().values()[p] <= narrow.lower().values()[p]);
            assert!(wide.upper().values()[p] >= narrow.upper().values()[p]);
        }
    }

    #[test]
    fn inverted_interval_rejected() {
        assert!(matches!(
            IntervalField::new(g(&[0.5]), g(&[0.1])),
            Err(ConformalError::InvertedInterval(0))
        ));
    }

    #[test]
    fn tolerant_ceiling() {
        assert_eq!(ceil_tolerant(0.9 * 110.0), 99.0);
        assert_eq!(ceil_tolerant(0.9 * 10.0), 9.0);
        assert_eq!(ceil_tolerant(5.4), 6.0);
        assert_eq!(ceil_tolerant(2.0), 2.0);
    }
}
