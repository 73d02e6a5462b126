//! Pixel-wise conformal risk control (PW-CRC and PW-CRC-ADJ).
//!
//! For a calibration image with heuristic bounds `[l̃, ũ]` and ground truth
//! `Y`, a pixel's deficit is `max(l̃ - Y, Y - ũ)`: the smallest additive
//! widening that covers it. The pixel is miscovered at `λ` iff its deficit
//! exceeds `λ`, so the empirical risk `R̂(λ)` is a right-continuous,
//! nonincreasing step function that only drops at deficit values. `λ̂` is
//! found exactly by bisecting over the bit patterns of non-negative `f32`
//! values, whose integer order matches their numeric order; the smallest
//! feasible value is always `0` or one of the deficits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_alpha, ConformalError, Feasibility, IntervalField};
use crate::grid::{BinaryMask, GridError, ImageGrid, Units};

/// How per-pixel miscoverage is pooled into the risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossAggregation {
    /// Mean over images of the per-image miscovered fraction (`B = 1`).
    #[default]
    PerImage,
    /// Fraction of miscovered pixels pooled over all images.
    PerPixel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrcOptions {
    pub alpha: f64,
    /// Upper bound `B` on the loss.
    pub b: f64,
    pub adjusted: bool,
    pub aggregation: LossAggregation,
    /// Quantile levels the heuristic bounds were built with (metadata).
    pub bound_quantiles: (f64, f64),
}

impl Default for CrcOptions {
    fn default() -> Self {
        CrcOptions {
            alpha: 0.1,
            b: 1.0,
            adjusted: false,
            aggregation: LossAggregation::PerImage,
            bound_quantiles: (0.05, 0.95),
        }
    }
}

/// One calibration image.
#[derive(Debug, Clone, Copy)]
pub struct CrcItem<'a> {
    pub bounds: &'a IntervalField,
    pub ct: &'a ImageGrid,
    pub mask: &'a BinaryMask,
}

/// Fitted PW-CRC artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct CrcCalibration {
    pub lambda_hat: f32,
    pub alpha: f64,
    pub b: f64,
    pub n_c: usize,
    pub patients: usize,
    pub n_p: f64,
    pub adjusted: bool,
    pub aggregation: LossAggregation,
    pub bound_quantiles: (f64, f64),
}

fn check_item(bounds: &IntervalField, ct: &ImageGrid, mask: &BinaryMask) -> Result<(), ConformalError> {
    bounds.shape().ensure_same(ct.shape())?;
    bounds.shape().ensure_same(mask.shape())?;
    if bounds.units() != ct.units() {
        return Err(GridError::UnitMismatch {
            expected: ct.units(),
            actual: bounds.units(),
        }
        .into());
    }
    if mask.is_empty() {
        return Err(ConformalError::EmptyMask);
    }
    Ok(())
}

fn deficit(l: f32, u: f32, y: f32) -> f32 {
    (l - y).max(y - u)
}

/// Fraction of mask pixels left uncovered by `[l̃ - λ, ũ + λ]`.
pub fn miscoverage_risk(
    bounds: &IntervalField,
    ct: &ImageGrid,
    mask: &BinaryMask,
    lambda: f32,
) -> Result<f64, ConformalError> {
    check_item(bounds, ct, mask)?;
    let (lo, hi, y) = (bounds.lower().values(), bounds.upper().values(), ct.values());
    let missed = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|&(p, &m)| m && deficit(lo[p], hi[p], y[p]) > lambda)
        .count();
    Ok(missed as f64 / mask.count() as f64)
}

struct ImageDeficits {
    /// Positive deficits of mask pixels, ascending.
    sorted: Vec<f32>,
    mask_px: usize,
}

impl ImageDeficits {
    fn count_above(&self, lambda: f32) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&d| d <= lambda)
    }
}

struct RiskCurve {
    images: Vec<ImageDeficits>,
    weights: Vec<f64>,
}

impl RiskCurve {
    fn new(images: Vec<ImageDeficits>, aggregation: LossAggregation) -> Self {
        let n = images.len() as f64;
        let total_px: usize = images.iter().map(|d| d.mask_px).sum();
        let weights = images
            .iter()
            .map(|d| match aggregation {
                LossAggregation::PerImage => 1.0 / (n * d.mask_px as f64),
                LossAggregation::PerPixel => 1.0 / total_px as f64,
            })
            .collect();
        RiskCurve { images, weights }
    }

    /// `R̂(λ)`, accumulated in a fixed order.
    fn risk(&self, lambda: f32) -> f64 {
        self.images
            .iter()
            .zip(&self.weights)
            .map(|(d, w)| d.count_above(lambda) as f64 * w)
            .sum()
    }

    fn max_deficit(&self) -> f32 {
        self.images
            .iter()
            .filter_map(|d| d.sorted.last().copied())
            .fold(0.0, f32::max)
    }
}

/// The CRC acceptance test for a given empirical risk.
#[derive(Debug, Clone, Copy)]
struct Criterion {
    n_c: f64,
    n_p: f64,
    b: f64,
    alpha: f64,
    adjusted: bool,
}

impl Criterion {
    fn holds(&self, risk: f64) -> bool {
        let extra = if self.adjusted { self.n_p } else { 1.0 };
        let lhs = self.n_c / (self.n_c + extra) * risk + self.b * extra / (self.n_c + extra);
        lhs <= self.alpha + 1e-12
    }
}

/// Computes `λ̂ = inf{λ : n/(n+m)·R̂(λ) + B·m/(n+m) <= α}` with `m = 1`
/// (base) or `m = n_p` (adjusted).
pub fn calibrate_pw_crc(
    items: &[CrcItem<'_>],
    patients: usize,
    opts: &CrcOptions,
) -> Result<CrcCalibration, ConformalError> {
    check_alpha(opts.alpha)?;
    if items.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    if patients == 0 {
        return Err(ConformalError::NoPatients);
    }
    let shape = items[0].ct.shape();
    for it in items {
        shape.ensure_same(it.ct.shape())?;
        check_item(it.bounds, it.ct, it.mask)?;
    }
    let n_c = items.len();
    let n_p = n_c as f64 / patients as f64;
    let criterion = Criterion {
        n_c: n_c as f64,
        n_p,
        b: opts.b,
        alpha: opts.alpha,
        adjusted: opts.adjusted,
    };
    if !criterion.holds(0.0) {
        let (min_n_c, min_patients) = if opts.adjusted {
            // B·n_p/(n_c+n_p) = B/(P+1) depends on P only
            let p = ((opts.b / opts.alpha) - 1.0 - 1e-9).ceil().max(1.0) as usize;
            (None, Some(p))
        } else {
            let n = ((opts.b / opts.alpha) - 1.0 - 1e-9).ceil().max(1.0) as usize;
            (Some(n), None)
        };
        return Err(ConformalError::Infeasible(Feasibility {
            n_c,
            patients,
            adjusted: opts.adjusted,
            min_n_c,
            min_patients,
        }));
    }

    let images: Vec<ImageDeficits> = items
        .par_iter()
        .map(|it| {
            let (lo, hi, y) = (it.bounds.lower().values(), it.bounds.upper().values(), it.ct.values());
            let mut sorted: Vec<f32> = it
                .mask
                .bits()
                .iter()
                .enumerate()
                .filter(|&(_, &m)| m)
                .map(|(p, _)| deficit(lo[p], hi[p], y[p]))
                .filter(|&d| d > 0.0)
                .collect();
            sorted.sort_unstable_by(f32::total_cmp);
            ImageDeficits {
                sorted,
                mask_px: it.mask.count(),
            }
        })
        .collect();
    let curve = RiskCurve::new(images, opts.aggregation);

    let lambda_hat = if criterion.holds(curve.risk(0.0)) {
        0.0
    } else {
        // invariant: holds(hi), !holds(lo)
        let (mut lo, mut hi) = (0u32, curve.max_deficit().to_bits());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if criterion.holds(curve.risk(f32::from_bits(mid))) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        f32::from_bits(hi)
    };

    Ok(CrcCalibration {
        lambda_hat,
        alpha: opts.alpha,
        b: opts.b,
        n_c,
        patients,
        n_p,
        adjusted: opts.adjusted,
        aggregation: opts.aggregation,
        bound_quantiles: opts.bound_quantiles,
    })
}

/// Widens heuristic bounds by `λ̂` and clips to `[-1, 1]`.
pub fn predict_crc(bounds: &IntervalField, calib: &CrcCalibration) -> Result<IntervalField, ConformalError> {
    bounds.lower().require_units(Units::Normalized)?;
    let lam = calib.lambda_hat;
    let lower = bounds.lower().values().iter().map(|&l| (l - lam).max(-1.0)).collect();
    let upper = bounds.upper().values().iter().map(|&u| (u + lam).min(1.0)).collect();
    let shape = bounds.shape();
    IntervalField::new(
        ImageGrid::from_parts(shape, lower, Units::Normalized),
        ImageGrid::from_parts(shape, upper, Units::Normalized),
    )
}
