//! Translation and uncertainty metrics.
//!
//! Intensity errors are accumulated in `f64` and reported in HU. Coverage
//! uses closed intervals: a ground-truth value on a bound counts as covered.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::IntervalField;
use crate::grid::{BinaryMask, GridError, ImageGrid, NormalizationSpec, Units};
use crate::segmentation::SegmentationPrior;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("evaluation mask is empty")]
    EmptyMask,
    #[error("soft-tissue mask is empty")]
    EmptySoftMask,
    #[error("every stratification group is empty")]
    AllGroupsEmpty,
    #[error("stratification edges must be finite and strictly increasing")]
    BadBins,
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn same_units(a: &ImageGrid, b: &ImageGrid) -> Result<(), MetricsError> {
    a.shape().ensure_same(b.shape())?;
    if a.units() != b.units() {
        return Err(GridError::UnitMismatch {
            expected: b.units(),
            actual: a.units(),
        }
        .into());
    }
    Ok(())
}

/// HU per unit of the grid's intensity scale.
fn hu_scale(units: Units, spec: &NormalizationSpec) -> f64 {
    match units {
        Units::Hu => 1.0,
        Units::Normalized => spec.half_range(),
    }
}

/// Mean absolute error over `mask`, in HU.
pub fn masked_mae(
    sct: &ImageGrid,
    ct: &ImageGrid,
    mask: &BinaryMask,
    spec: &NormalizationSpec,
) -> Result<f64, MetricsError> {
    same_units(sct, ct)?;
    ct.shape().ensure_same(mask.shape())?;
    let n = mask.count();
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let sum: f64 = sct
        .values()
        .iter()
        .zip(ct.values())
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / n as f64 * hu_scale(ct.units(), spec))
}

/// `(M_body ∩ M̂_body) \ (M_bone ∪ M̂_bone)`.
pub fn soft_mask(
    m_body: &BinaryMask,
    mhat_body: &BinaryMask,
    m_bone: &BinaryMask,
    mhat_bone: &BinaryMask,
) -> Result<BinaryMask, MetricsError> {
    let body = m_body.and(mhat_body)?;
    let bone = m_bone.or(mhat_bone)?;
    Ok(body.and_not(&bone)?)
}

/// Soft-tissue MAE in HU: absolute error weighted uniformly over the soft
/// mask built from the ground-truth and predicted priors.
pub fn soft_mae(
    sct: &ImageGrid,
    ct: &ImageGrid,
    truth: &SegmentationPrior,
    predicted: &SegmentationPrior,
    spec: &NormalizationSpec,
) -> Result<f64, MetricsError> {
    let soft = soft_mask(&truth.body, &predicted.body, &truth.bone, &predicted.bone)?;
    if soft.is_empty() {
        return Err(MetricsError::EmptySoftMask);
    }
    masked_mae(sct, ct, &soft, spec)
}

/// What `dice` returns when both masks are empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyDice {
    #[default]
    One,
    Undefined,
}

/// `2|p ∩ q| / (|p| + |q|)`; two empty masks score 1.
pub fn dice(p: &BinaryMask, q: &BinaryMask) -> Result<f64, MetricsError> {
    Ok(dice_with(p, q, EmptyDice::One)?.expect("policy One always yields a value"))
}

pub fn dice_with(p: &BinaryMask, q: &BinaryMask, empty: EmptyDice) -> Result<Option<f64>, MetricsError> {
    let inter = p.and(q)?.count();
    let total = p.count() + q.count();
    if total == 0 {
        return Ok(match empty {
            EmptyDice::One => Some(1.0),
            EmptyDice::Undefined => None,
        });
    }
    Ok(Some(2.0 * inter as f64 / total as f64))
}

fn check_intervals(iv: &IntervalField, ct: &ImageGrid, mask: &BinaryMask) -> Result<(), MetricsError> {
    iv.shape().ensure_same(ct.shape())?;
    iv.shape().ensure_same(mask.shape())?;
    if iv.units() != ct.units() {
        return Err(GridError::UnitMismatch {
            expected: ct.units(),
            actual: iv.units(),
        }
        .into());
    }
    if mask.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    Ok(())
}

/// Fraction of mask pixels whose ground truth lies in its interval.
pub fn marginal_coverage(iv: &IntervalField, ct: &ImageGrid, mask: &BinaryMask) -> Result<f64, MetricsError> {
    check_intervals(iv, ct, mask)?;
    let covered = mask
        .bits()
        .iter()
        .zip(ct.values())
        .enumerate()
        .filter(|&(p, (&m, &y))| m && iv.contains(p, y))
        .count();
    Ok(covered as f64 / mask.count() as f64)
}

/// Intensity cut points splitting ground-truth pixels into `edges.len() + 1`
/// groups. A value equal to an edge falls in the upper group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StratificationBins {
    edges: Vec<f32>,
}

impl StratificationBins {
    pub fn new(edges: Vec<f32>) -> Result<Self, MetricsError> {
        if edges.is_empty() || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::BadBins);
        }
        Ok(StratificationBins { edges })
    }

    /// Parses `"-200,150,350"`.
    pub fn parse(s: &str) -> Result<Self, MetricsError> {
        let edges = s
            .split(',')
            .map(|t| t.trim().parse::<f32>().map_err(|_| MetricsError::BadBins))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f32] {
        &self.edges
    }

    pub fn groups(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn group_of(&self, value: f32) -> usize {
        self.edges.partition_point(|&e| e <= value)
    }
}

impl Default for StratificationBins {
    /// Air / soft tissue / transitional / bone cuts in HU.
    fn default() -> Self {
        StratificationBins {
            edges: vec![-200.0, 150.0, 350.0],
        }
    }
}

/// Covered and total pixel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoverageCount {
    pub covered: usize,
    pub total: usize,
}

impl CoverageCount {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.covered as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedCoverage {
    /// Mean `|(1 - α) - Cov(g)|` over nonempty groups.
    pub error: f64,
    pub groups: Vec<CoverageCount>,
}

/// Per-group coverage counts; ground-truth values are binned in HU (bins are
/// in HU, `spec` converts normalized data).
pub fn group_coverage(
    iv: &IntervalField,
    ct: &ImageGrid,
    mask: &BinaryMask,
    bins: &StratificationBins,
    spec: &NormalizationSpec,
) -> Result<Vec<CoverageCount>, MetricsError> {
    check_intervals(iv, ct, mask)?;
    let mut groups = vec![CoverageCount::default(); bins.groups()];
    for (p, (&m, &y)) in mask.bits().iter().zip(ct.values()).enumerate() {
        if !m {
            continue;
        }
        let hu = match ct.units() {
            Units::Hu => y,
            Units::Normalized => spec.denormalize_value(y),
        };
        let g = &mut groups[bins.group_of(hu)];
        g.total += 1;
        if iv.contains(p, y) {
            g.covered += 1;
        }
    }
    Ok(groups)
}

/// Pixel-stratified coverage error from pooled group counts.
pub fn stratified_error_from_counts(groups: &[CoverageCount], alpha: f64) -> Result<f64, MetricsError> {
    let rates: Vec<f64> = groups.iter().filter_map(CoverageCount::rate).collect();
    if rates.is_empty() {
        return Err(MetricsError::AllGroupsEmpty);
    }
    Ok(rates.iter().map(|c| ((1.0 - alpha) - c).abs()).sum::<f64>() / rates.len() as f64)
}

pub fn stratified_coverage_error(
    iv: &IntervalField,
    ct: &ImageGrid,
    mask: &BinaryMask,
    bins: &StratificationBins,
    alpha: f64,
    spec: &NormalizationSpec,
) -> Result<StratifiedCoverage, MetricsError> {
    let groups = group_coverage(iv, ct, mask, bins, spec)?;
    let error = stratified_error_from_counts(&groups, alpha)?;
    Ok(StratifiedCoverage { error, groups })
}

/// Mean `upper - lower` over `mask`, in the intervals' units.
pub fn mean_interval_size(iv: &IntervalField, mask: &BinaryMask) -> Result<f64, MetricsError> {
    iv.shape().ensure_same(mask.shape())?;
    let n = mask.count();
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let sum: f64 = iv
        .widths()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|(w, _)| w as f64)
        .sum();
    Ok(sum / n as f64)
}

/// `ln(|Ĉ| + 1)` per pixel, with the size measured in `units`.
///
/// The map is an unbounded non-negative field, so it is tagged as HU
/// regardless of the requested size units.
pub fn uncertainty_map(iv: &IntervalField, units: Units, spec: &NormalizationSpec) -> ImageGrid {
    let scale = match (iv.units(), units) {
        (Units::Normalized, Units::Hu) => spec.half_range(),
        (Units::Hu, Units::Normalized) => 1.0 / spec.half_range(),
        _ => 1.0,
    };
    let values = iv.widths().map(|w| ((w as f64 * scale) + 1.0).ln() as f32).collect();
    ImageGrid::from_parts(iv.shape(), values, Units::Hu)
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsReport {
    pub label: String,
    pub mae_hu: Option<f64>,
    pub soft_mae_hu: Option<f64>,
    pub dice_body: Option<f64>,
    pub dice_bone: Option<f64>,
    pub marginal_coverage: [Option<f64>; 2],
    pub stratified_coverage_error: [Option<f64>; 2],
    pub mean_interval_size: [Option<f64>; 2],
    pub group_coverage: [Vec<Option<f64>>; 2],
    pub slices: usize,
}

impl MetricsReport {
    /// Column-wise mean of the given rows, skipping missing values.
    pub fn aggregate(label: &str, rows: &[MetricsReport]) -> MetricsReport {
        fn mean(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let v: Vec<f64> = it.flatten().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
        let pair = |f: &dyn Fn(&MetricsReport) -> [Option<f64>; 2]| {
            [mean(rows.iter().map(|r| f(r)[0])), mean(rows.iter().map(|r| f(r)[1]))]
        };
        let groups = |i: usize| {
            let g = rows.iter().map(|r| r.group_coverage[i].len()).max().unwrap_or(0);
            (0..g)
                .map(|k| mean(rows.iter().map(|r| r.group_coverage[i].get(k).copied().flatten())))
                .collect()
        };
        MetricsReport {
            label: label.to_string(),
            mae_hu: mean(rows.iter().map(|r| r.mae_hu)),
            soft_mae_hu: mean(rows.iter().map(|r| r.soft_mae_hu)),
            dice_body: mean(rows.iter().map(|r| r.dice_body)),
            dice_bone: mean(rows.iter().map(|r| r.dice_bone)),
            marginal_coverage: pair(&|r| r.marginal_coverage),
            stratified_coverage_error: pair(&|r| r.stratified_coverage_error),
            mean_interval_size: pair(&|r| r.mean_interval_size),
            group_coverage: [groups(0), groups(1)],
            slices: rows.iter().map(|r| r.slices).sum(),
        }
    }
}
