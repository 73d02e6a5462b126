//! Pixel-wise split conformal prediction (PW-SCP and PW-SCP-ADJ).
//!
//! The calibration stack is `n_c` score slices of `H x W` pixels. The
//! per-pixel quantile needs all `n_c` scores of one pixel at once, so the
//! stack is processed in chunks of pixel columns: each chunk gathers its
//! scores pixel-major into a buffer sized by the memory budget and selects the
//! k-th order statistic per pixel. Chunks are independent, so they run in
//! parallel and the result does not depend on the thread count.

use std::ops::Range;

use rayon::prelude::*;

use super::{ceil_tolerant, check_alpha, ConformalError, EvalMaskPolicy, IntervalField};
use crate::grid::{GridError, ImageGrid, Shape, Units};

/// Order-statistic index used for the conformal quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    /// 1-based index into the ascending scores.
    Index(usize),
    /// The index exceeds `n_c`; the interval is the whole output range.
    Saturated,
}

/// `⌈(1-α)(n_c+1)⌉` or, adjusted, `⌈(1-α)(n_c+n_p)⌉`; saturated when it
/// exceeds `n_c`.
pub fn scp_rank(n_c: usize, n_p: f64, alpha: f64, adjusted: bool) -> Rank {
    let extra = if adjusted { n_p } else { 1.0 };
    let k = ceil_tolerant((1.0 - alpha) * (n_c as f64 + extra)).max(1.0) as usize;
    if k > n_c {
        Rank::Saturated
    } else {
        Rank::Index(k)
    }
}

/// Source of calibration scores, read one slice and pixel range at a time.
pub trait ScoreStack: Sync {
    fn shape(&self) -> Shape;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Writes the scores of slice `index` for pixels `range` into `out`
    /// (`out.len() == range.len()`).
    fn read_scores(&self, index: usize, range: Range<usize>, out: &mut [f32]) -> Result<(), ConformalError>;
}

/// Precomputed score grids.
pub struct GridScoreStack<'a> {
    shape: Shape,
    scores: &'a [Vec<f32>],
}

impl<'a> GridScoreStack<'a> {
    pub fn new(shape: Shape, scores: &'a [Vec<f32>]) -> Result<Self, ConformalError> {
        for s in scores {
            if s.len() != shape.len() {
                return Err(GridError::LengthMismatch {
                    expected: shape.len(),
                    actual: s.len(),
                }
                .into());
            }
        }
        Ok(GridScoreStack { shape, scores })
    }
}

impl ScoreStack for GridScoreStack<'_> {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn len(&self) -> usize {
        self.scores.len()
    }

    fn read_scores(&self, index: usize, range: Range<usize>, out: &mut [f32]) -> Result<(), ConformalError> {
        out.copy_from_slice(&self.scores[index][range]);
        Ok(())
    }
}

/// One calibration slice: prediction, ground truth and its patient.
#[derive(Debug, Clone)]
pub struct ScpPair {
    pub patient_id: String,
    pub sct: ImageGrid,
    pub ct: ImageGrid,
}

/// Scores computed on the fly from in-memory `(sct, ct)` pairs.
pub struct PairScoreStack<'a> {
    shape: Shape,
    pairs: &'a [ScpPair],
}

impl<'a> PairScoreStack<'a> {
    pub fn new(pairs: &'a [ScpPair]) -> Result<Self, ConformalError> {
        let first = pairs.first().ok_or(ConformalError::EmptyCalibration)?;
        let shape = first.ct.shape();
        for p in pairs {
            shape.ensure_same(p.sct.shape())?;
            shape.ensure_same(p.ct.shape())?;
            if p.sct.units() != p.ct.units() {
                return Err(GridError::UnitMismatch {
                    expected: p.ct.units(),
                    actual: p.sct.units(),
                }
                .into());
            }
        }
        Ok(PairScoreStack { shape, pairs })
    }
}

impl ScoreStack for PairScoreStack<'_> {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn read_scores(&self, index: usize, range: Range<usize>, out: &mut [f32]) -> Result<(), ConformalError> {
        let p = &self.pairs[index];
        let a = &p.sct.values()[range.clone()];
        let b = &p.ct.values()[range];
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = (x - y).abs();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScpOptions {
    pub alpha: f64,
    pub adjusted: bool,
    pub eval_mask_policy: EvalMaskPolicy,
    /// Upper bound on the bytes held in chunk buffers at any one time.
    pub memory_budget_bytes: usize,
}

impl Default for ScpOptions {
    fn default() -> Self {
        ScpOptions {
            alpha: 0.1,
            adjusted: false,
            eval_mask_policy: EvalMaskPolicy::Body,
            memory_budget_bytes: 512 << 20,
        }
    }
}

/// Per-pixel conformal quantiles, or the saturation marker.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantiles {
    Field { shape: Shape, values: Vec<f32> },
    Saturated { shape: Shape },
}

impl Quantiles {
    pub fn shape(&self) -> Shape {
        match self {
            Quantiles::Field { shape, .. } | Quantiles::Saturated { shape } => *shape,
        }
    }

    pub fn values(&self) -> Option<&[f32]> {
        match self {
            Quantiles::Field { values, .. } => Some(values),
            Quantiles::Saturated { .. } => None,
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self, Quantiles::Saturated { .. })
    }
}

/// Fitted PW-SCP artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ScpCalibration {
    pub qhat: Quantiles,
    pub alpha: f64,
    pub n_c: usize,
    pub patients: usize,
    /// Average slices per patient, `n_c / P`.
    pub n_p: f64,
    pub adjusted: bool,
    pub eval_mask_policy: EvalMaskPolicy,
}

impl ScpCalibration {
    pub fn rank(&self) -> Rank {
        scp_rank(self.n_c, self.n_p, self.alpha, self.adjusted)
    }
}

/// Fits per-pixel quantiles over a score stack of `patients` patients.
pub fn calibrate_pw_scp(
    stack: &dyn ScoreStack,
    patients: usize,
    opts: &ScpOptions,
) -> Result<ScpCalibration, ConformalError> {
    check_alpha(opts.alpha)?;
    let n_c = stack.len();
    if n_c == 0 {
        return Err(ConformalError::EmptyCalibration);
    }
    if patients == 0 {
        return Err(ConformalError::NoPatients);
    }
    let shape = stack.shape();
    let n_p = n_c as f64 / patients as f64;
    let calibration = |qhat| ScpCalibration {
        qhat,
        alpha: opts.alpha,
        n_c,
        patients,
        n_p,
        adjusted: opts.adjusted,
        eval_mask_policy: opts.eval_mask_policy,
    };
    let k = match scp_rank(n_c, n_p, opts.alpha, opts.adjusted) {
        Rank::Saturated => return Ok(calibration(Quantiles::Saturated { shape })),
        Rank::Index(k) => k,
    };

    let n_px = shape.len();
    let workers = rayon::current_num_threads().max(1);
    // each in-flight chunk holds a gather buffer plus one slice row buffer
    let per_pixel = 4 * (n_c + 1);
    let budget_px = (opts.memory_budget_bytes / (per_pixel * workers)).max(1);
    let chunk_px = budget_px.min(n_px.div_ceil(4 * workers).max(1024)).min(n_px);
    let chunks: Vec<Range<usize>> = (0..n_px)
        .step_by(chunk_px)
        .map(|s| s..(s + chunk_px).min(n_px))
        .collect();

    let parts: Vec<Vec<f32>> = chunks
        .into_par_iter()
        .map(|range| select_chunk(stack, range, n_c, k))
        .collect::<Result<_, _>>()?;
    let values = parts.concat();
    Ok(calibration(Quantiles::Field { shape, values }))
}

fn select_chunk(stack: &dyn ScoreStack, range: Range<usize>, n_c: usize, k: usize) -> Result<Vec<f32>, ConformalError> {
    let len = range.len();
    let mut gathered = vec![0f32; len * n_c];
    let mut row = vec![0f32; len];
    for s in 0..n_c {
        stack.read_scores(s, range.clone(), &mut row)?;
        for (p, &v) in row.iter().enumerate() {
            gathered[p * n_c + s] = v;
        }
    }
    Ok(gathered
        .chunks_exact_mut(n_c)
        .map(|scores| *scores.select_nth_unstable_by(k - 1, f32::total_cmp).1)
        .collect())
}

/// Convenience wrapper over in-memory pairs; `P` is the number of distinct
/// patient ids.
pub fn calibrate_pw_scp_pairs(pairs: &[ScpPair], opts: &ScpOptions) -> Result<ScpCalibration, ConformalError> {
    let stack = PairScoreStack::new(pairs)?;
    let patients = pairs
        .iter()
        .map(|p| p.patient_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    calibrate_pw_scp(&stack, patients, opts)
}

/// Symmetric interval `[Ŷ - q̂, Ŷ + q̂]` clipped to `[-1, 1]`.
pub fn predict_scp(sct: &ImageGrid, calib: &ScpCalibration) -> Result<IntervalField, ConformalError> {
    sct.require_units(Units::Normalized)?;
    let shape = sct.shape();
    shape.ensure_same(calib.qhat.shape())?;
    let qhat = match &calib.qhat {
        Quantiles::Saturated { .. } => return Ok(IntervalField::full_range(shape)),
        Quantiles::Field { values, .. } => values,
    };
    let (lower, upper): (Vec<f32>, Vec<f32>) = sct
        .values()
        .par_iter()
        .zip(qhat.par_iter())
        .map(|(&y, &q)| ((y - q).max(-1.0), (y + q).min(1.0)))
        .unzip();
    IntervalField::new(
        ImageGrid::from_parts(shape, lower, Units::Normalized),
        ImageGrid::from_parts(shape, upper, Units::Normalized),
    )
}
