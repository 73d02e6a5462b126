//! Translator stubs for the three input settings and an ensemble sampler.
//!
//! - `Cbct`: monotone piecewise-linear intensity LUT fitted by quantile
//!   matching on calibration pairs.
//! - `Seg`: constant fill per prior region (air, soft tissue, bone).
//! - `CSeg`: LUT output with a prior-guided radial bias correction in soft
//!   tissue, air forced outside the body and prior bone pulled toward the
//!   calibration bone value where the CBCT agrees.
//!
//! A [`Translator`] is fitted once and then applied to any number of slices.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BinaryMask, GridError, ImageGrid, NormalizationSpec, Shape, Units};
use crate::phantom::{stream_seed, AIR_HU};
use crate::segmentation::{build_prior, BodySegConfig, BoneSegConfig, SegmentationError, SegmentationPrior};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranslatorError {
    #[error("mode {mode} needs {input}")]
    ModeInputMissing { mode: TranslatorMode, input: &'static str },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("invalid translator config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TranslatorMode {
    #[serde(rename = "cbct")]
    Cbct,
    #[serde(rename = "seg")]
    Seg,
    #[serde(rename = "c+seg")]
    CSeg,
}

impl TranslatorMode {
    pub const ALL: [TranslatorMode; 3] = [TranslatorMode::Cbct, TranslatorMode::Seg, TranslatorMode::CSeg];

    pub fn as_str(self) -> &'static str {
        match self {
            TranslatorMode::Cbct => "cbct",
            TranslatorMode::Seg => "seg",
            TranslatorMode::CSeg => "c+seg",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TranslatorMode::Cbct => "CBCT",
            TranslatorMode::Seg => "SEG",
            TranslatorMode::CSeg => "C+SEG",
        }
    }

    pub fn uses_cbct(self) -> bool {
        self != TranslatorMode::Seg
    }

    pub fn uses_prior(self) -> bool {
        self != TranslatorMode::Cbct
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TranslatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TranslatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cbct" => Ok(TranslatorMode::Cbct),
            "seg" => Ok(TranslatorMode::Seg),
            "c+seg" | "cseg" => Ok(TranslatorMode::CSeg),
            other => Err(format!(
                "unknown translator mode {other:?} (expected cbct, seg or c+seg)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub lut_knots: usize,
    /// Soft tissue in SEG is filled per depth shell (chessboard distance to
    /// the body edge, 1 to `seg_depth_bins`, deeper pixels pooled); 0 fills
    /// one constant.
    pub seg_depth_bins: usize,
    /// Weight pulling C+SEG bone pixels toward the calibration bone value.
    pub bone_blend: f32,
    /// C+SEG blends a prior bone pixel only where the CBCT-derived value is
    /// at least this many HU.
    pub bone_evidence_hu: f32,
    /// Fit and remove a radial `a + b·ρ²` trend over prior soft tissue in C+SEG.
    pub radial_correction: bool,
    /// Give prior-body pixels that the CBCT shows as exterior air the
    /// soft-tissue value in C+SEG.
    pub fill_exterior_air: bool,
    /// Largest integer shift searched when aligning the CBCT body to the
    /// prior body in C+SEG; 0 disables alignment.
    pub align_radius_px: u32,
    /// Minimum Dice between the shifted CBCT body and the prior body for the
    /// shift to be applied.
    pub align_min_dice: f64,
    /// HU edges binning output intensity for the residual profile.
    pub residual_edges_hu: Vec<f32>,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            lut_knots: 33,
            seg_depth_bins: 12,
            bone_blend: 0.5,
            bone_evidence_hu: 150.0,
            radial_correction: true,
            fill_exterior_air: true,
            align_radius_px: 3,
            align_min_dice: 0.98,
            residual_edges_hu: vec![-500.0, -200.0, 150.0, 350.0],
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<(), TranslatorError> {
        if self.lut_knots < 2 {
            return Err(TranslatorError::BadConfig("lut_knots must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.bone_blend) {
            return Err(TranslatorError::BadConfig("bone_blend must lie in [0, 1]".into()));
        }
        if self.residual_edges_hu.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TranslatorError::BadConfig("residual edges must increase".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub k: usize,
    /// Noise standard deviation in normalized units.
    pub noise_sigma: f32,
    pub correlation_len_px: f32,
    pub seed: u64,
    /// Exponent on the residual profile factor; 0 gives uniform spread.
    pub residual_gain: f32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 16,
            noise_sigma: 0.03,
            correlation_len_px: 8.0,
            seed: 0,
            residual_gain: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), TranslatorError> {
        if self.k < 2 {
            return Err(TranslatorError::BadConfig(format!(
                "sampler k must be >= 2, got {}",
                self.k
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.correlation_len_px >= 0.0) || !self.residual_gain.is_finite() {
            return Err(TranslatorError::BadConfig(
                "noise_sigma and correlation_len_px must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A calibration pair; `cbct` may be absent when only SEG is needed.
#[derive(Debug, Clone, Copy)]
pub struct CalPair<'a> {
    pub cbct: Option<&'a ImageGrid>,
    pub ct: &'a ImageGrid,
    /// Prior for the pair; extracted from `ct` when absent.
    pub prior: Option<&'a SegmentationPrior>,
}

/// Monotone piecewise-linear map with constant extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityLut {
    pub x: Vec<f32>,
    pub y: Vec<f32>,
}

fn quantile_sorted(v: &[f32], q: f64) -> f32 {
    let i = (q * (v.len() - 1) as f64).round() as usize;
    v[i.min(v.len() - 1)]
}

impl IntensityLut {
    /// Quantile matching of `source` onto `target` at `knots` evenly spaced
    /// levels. Duplicate source knots are merged by averaging their targets.
    pub fn fit(mut source: Vec<f32>, mut target: Vec<f32>, knots: usize) -> Option<IntensityLut> {
        if source.is_empty() || target.is_empty() || knots < 2 {
            return None;
        }
        source.sort_unstable_by(f32::total_cmp);
        target.sort_unstable_by(f32::total_cmp);
        let mut x: Vec<f32> = Vec::with_capacity(knots);
        let mut y: Vec<f32> = Vec::with_capacity(knots);
        let mut dup = 1.0f32;
        for i in 0..knots {
            let q = i as f64 / (knots - 1) as f64;
            let (xs, ys) = (quantile_sorted(&source, q), quantile_sorted(&target, q));
            if x.last() == Some(&xs) {
                let last = y.last_mut().expect("nonempty");
                *last = (*last * dup + ys) / (dup + 1.0);
                dup += 1.0;
            } else {
                x.push(xs);
                y.push(ys);
                dup = 1.0;
            }
        }
        Some(IntensityLut { x, y })
    }

    pub fn apply(&self, v: f32) -> f32 {
        let n = self.x.len();
        if n == 1 || v <= self.x[0] {
            return self.y[0];
        }
        if v >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let j = self.x.partition_point(|&k| k <= v);
        let (x0, x1, y0, y1) = (self.x[j - 1], self.x[j], self.y[j - 1], self.y[j]);
        y0 + (y1 - y0) * (v - x0) / (x1 - x0)
    }
}

/// Mean absolute calibration residual by output intensity, relative to the
/// overall mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProfile {
    pub edges_hu: Vec<f32>,
    pub factors: Vec<f32>,
}

impl ResidualProfile {
    fn flat(edges_hu: &[f32]) -> Self {
        ResidualProfile {
            edges_hu: edges_hu.to_vec(),
            factors: vec![1.0; edges_hu.len() + 1],
        }
    }

    pub fn factor(&self, hu: f32) -> f32 {
        self.factors[self.edges_hu.partition_point(|&e| e <= hu)]
    }
}

/// A fitted translator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translator {
    pub config: TranslatorConfig,
    pub spec: NormalizationSpec,
    pub lut: Option<IntensityLut>,
    pub soft_hu: f32,
    /// Median soft-tissue HU per depth shell (empty for a constant fill).
    pub soft_by_depth: Vec<f32>,
    pub bone_hu: f32,
    pub bone_max_hu: f32,
    pub residuals: Vec<ResidualProfile>,
}

fn median(mut v: Vec<f32>) -> Option<f32> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable_by(f32::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

impl Translator {
    pub fn fit(
        pairs: &[CalPair<'_>],
        config: &TranslatorConfig,
        body_cfg: &BodySegConfig,
        bone_cfg: &BoneSegConfig,
        spec: &NormalizationSpec,
    ) -> Result<Translator, TranslatorError> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(TranslatorError::EmptyCalibration);
        }
        let mut cts = Vec::with_capacity(pairs.len());
        let mut priors = Vec::with_capacity(pairs.len());
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let (mut soft, mut bone) = (Vec::new(), Vec::new());
        let mut shells: Vec<Vec<f32>> = vec![Vec::new(); config.seg_depth_bins];
        for pair in pairs {
            let ct = pair.ct.to_hu(spec);
            let prior = match pair.prior {
                Some(p) => {
                    p.shape().ensure_same(ct.shape())?;
                    p.clone()
                }
                None => build_prior(&ct, body_cfg, bone_cfg, None)?,
            };
            if let Some(cbct) = pair.cbct {
                let cbct = cbct.to_hu(spec);
                cbct.shape().ensure_same(ct.shape())?;
                src.extend_from_slice(cbct.values());
                dst.extend_from_slice(ct.values());
            }
            let depth = body_depth(&prior.body);
            for (p, &v) in ct.values().iter().enumerate() {
                if prior.bone.bits()[p] {
                    bone.push(v);
                } else if prior.body.bits()[p] {
                    soft.push(v);
                    if let Some(shell) = shell_index(depth[p], config.seg_depth_bins) {
                        shells[shell].push(v);
                    }
                }
            }
            cts.push(ct);
            priors.push(prior);
        }
        let bone_max_hu = bone.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let soft_hu = median(soft).unwrap_or(0.0);
        let soft_by_depth = shells.into_iter().map(|v| median(v).unwrap_or(soft_hu)).collect();
        let bone_hu = median(bone).unwrap_or(bone_cfg.high_hu);
        let mut t = Translator {
            config: config.clone(),
            spec: *spec,
            lut: IntensityLut::fit(src, dst, config.lut_knots),
            soft_hu,
            soft_by_depth,
            bone_hu,
            bone_max_hu: if bone_max_hu.is_finite() {
                bone_max_hu.max(bone_hu)
            } else {
                bone_hu
            },
            residuals: vec![ResidualProfile::flat(&config.residual_edges_hu); 3],
        };
        for mode in TranslatorMode::ALL {
            if mode.uses_cbct() && t.lut.is_none() {
                continue;
            }
            let edges = &config.residual_edges_hu;
            let mut sum = vec![0f64; edges.len() + 1];
            let mut cnt = vec![0usize; edges.len() + 1];
            for (pair, (ct, prior)) in pairs.iter().zip(cts.iter().zip(&priors)) {
                let out = t.translate(pair.cbct, Some(prior), mode)?;
                for (p, (&o, &y)) in out.values().iter().zip(ct.values()).enumerate() {
                    if !prior.body.bits()[p] {
                        continue;
                    }
                    let b = edges.partition_point(|&e| e <= o);
                    sum[b] += (o - y).abs() as f64;
                    cnt[b] += 1;
                }
            }
            let total: usize = cnt.iter().sum();
            if total == 0 {
                continue;
            }
            let overall = sum.iter().sum::<f64>() / total as f64;
            if overall <= 0.0 {
                continue;
            }
            t.residuals[mode.index()].factors = sum
                .iter()
                .zip(&cnt)
                .map(|(&s, &c)| if c == 0 { 1.0 } else { (s / c as f64 / overall) as f32 })
                .collect();
        }
        Ok(t)
    }

    fn soft_at_depth(&self, depth: u32) -> f32 {
        shell_index(depth, self.soft_by_depth.len()).map_or(self.soft_hu, |i| self.soft_by_depth[i])
    }

    /// Translates one slice to HU.
    pub fn translate(
        &self,
        cbct: Option<&ImageGrid>,
        prior: Option<&SegmentationPrior>,
        mode: TranslatorMode,
    ) -> Result<ImageGrid, TranslatorError> {
        let missing = |input| TranslatorError::ModeInputMissing { mode, input };
        match mode {
            TranslatorMode::Cbct => {
                let cbct = cbct.ok_or(missing("a CBCT slice"))?.to_hu(&self.spec);
                let lut = self.lut.as_ref().ok_or(missing("calibration CBCT/CT pairs"))?;
                Ok(ImageGrid::from_parts(
                    cbct.shape(),
                    cbct.values().iter().map(|&v| lut.apply(v)).collect(),
                    Units::Hu,
                ))
            }
            TranslatorMode::Seg => {
                let prior = prior.ok_or(missing("a segmentation prior"))?;
                let depth = body_depth(&prior.body);
                let values = prior
                    .body
                    .bits()
                    .iter()
                    .zip(prior.bone.bits())
                    .zip(depth)
                    .map(|((&body, &bone), d)| match (body, bone) {
                        (_, true) => self.bone_hu,
                        (true, false) => self.soft_at_depth(d),
                        _ => AIR_HU,
                    })
                    .collect();
                Ok(ImageGrid::from_parts(prior.shape(), values, Units::Hu))
            }
            TranslatorMode::CSeg => {
                let prior = prior.ok_or(missing("a segmentation prior"))?;
                let cbct_in = cbct.ok_or(missing("a CBCT slice"))?;
                cbct_in.shape().ensure_same(prior.shape())?;
                let aligned = align_to_body(&cbct_in.to_hu(&self.spec), &prior.body, &self.config);
                let lut_out = self.translate(Some(&aligned), None, TranslatorMode::Cbct)?;
                let mut v = lut_out.into_values();
                if self.config.fill_exterior_air {
                    let exterior = exterior_air(&v, prior.shape());
                    let depth = body_depth(&prior.body);
                    for (p, x) in v.iter_mut().enumerate() {
                        if exterior[p] && prior.body.bits()[p] {
                            *x = self.soft_at_depth(depth[p]);
                        }
                    }
                }
                let soft = prior.body.and_not(&prior.bone)?;
                if self.config.radial_correction {
                    remove_radial_trend(&mut v, prior.shape(), &soft);
                }
                let beta = self.config.bone_blend;
                for (p, x) in v.iter_mut().enumerate() {
                    if !prior.body.bits()[p] {
                        *x = AIR_HU;
                    } else if prior.bone.bits()[p] && *x >= self.config.bone_evidence_hu {
                        *x = (1.0 - beta) * *x + beta * self.bone_hu;
                    }
                    *x = x.clamp(AIR_HU, self.bone_max_hu);
                }
                Ok(ImageGrid::from_parts(prior.shape(), v, Units::Hu))
            }
        }
    }

    /// `k` normalized samples around the translation, with correlated noise
    /// scaled per pixel by the mode's residual profile.
    pub fn sample_ensemble(
        &self,
        cbct: Option<&ImageGrid>,
        prior: Option<&SegmentationPrior>,
        mode: TranslatorMode,
        cfg: &SamplerConfig,
    ) -> Result<Vec<ImageGrid>, TranslatorError> {
        cfg.validate()?;
        let base = self.translate(cbct, prior, mode)?;
        let norm = base.to_normalized(&self.spec);
        if cfg.noise_sigma == 0.0 {
            return Ok(vec![norm; cfg.k]);
        }
        let profile = &self.residuals[mode.index()];
        let sigma: Vec<f32> = base
            .values()
            .iter()
            .map(|&hu| cfg.noise_sigma * profile.factor(hu).max(1e-3).powf(cfg.residual_gain))
            .collect();
        let shape = base.shape();
        Ok((0..cfg.k)
            .map(|i| {
                let field = smooth_noise(shape, cfg.correlation_len_px, stream_seed(cfg.seed, i as u64));
                let values = norm
                    .values()
                    .iter()
                    .zip(&field)
                    .zip(&sigma)
                    .map(|((&y, &z), &s)| (y + s * z).clamp(-1.0, 1.0))
                    .collect();
                ImageGrid::from_parts(shape, values, Units::Normalized)
            })
            .collect())
    }
}

/// Shifts `grid` by the integer offset within `align_radius_px` that best
/// overlaps its `>= -300 HU` region with `body`, if the resulting Dice
/// reaches `align_min_dice`. Ties go to the smaller shift.
fn align_to_body(grid: &ImageGrid, body: &BinaryMask, cfg: &TranslatorConfig) -> ImageGrid {
    if cfg.align_radius_px == 0 {
        return grid.clone();
    }
    let Shape { height: h, width: w } = grid.shape();
    let (hi, wi) = (h as i64, w as i64);
    let fg: Vec<bool> = grid.values().iter().map(|&v| v >= -300.0).collect();
    let fg_count = fg.iter().filter(|&&b| b).count();
    let body_count = body.count();
    let r = cfg.align_radius_px as i64;
    let mut best = (0usize, i64::MAX, 0i64, 0i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let mut overlap = 0usize;
            for row in 0.max(dy)..hi.min(hi + dy) {
                let sr = row - dy;
                for col in 0.max(dx)..wi.min(wi + dx) {
                    let sc = col - dx;
                    if fg[(sr * wi + sc) as usize] && body.bits()[(row * wi + col) as usize] {
                        overlap += 1;
                    }
                }
            }
            let dist = dy * dy + dx * dx;
            if overlap > best.0 || (overlap == best.0 && dist < best.1) {
                best = (overlap, dist, dy, dx);
            }
        }
    }
    let (overlap, _, dy, dx) = best;
    let dice = 2.0 * overlap as f64 / (fg_count + body_count).max(1) as f64;
    if (dy == 0 && dx == 0) || dice < cfg.align_min_dice {
        return grid.clone();
    }
    let src = grid.values();
    let values = (0..h * w)
        .map(|p| {
            let (sr, sc) = ((p / w) as i64 - dy, (p % w) as i64 - dx);
            if sr < 0 || sc < 0 || sr >= hi || sc >= wi {
                AIR_HU
            } else {
                src[(sr * wi + sc) as usize]
            }
        })
        .collect();
    ImageGrid::from_parts(grid.shape(), values, Units::Hu)
}

/// Chessboard distance from each body pixel to the nearest non-body pixel
/// (the image border counts as outside); 0 outside the body.
pub fn body_depth(body: &BinaryMask) -> Vec<u32> {
    let Shape { height: h, width: w } = body.shape();
    let bits = body.bits();
    let neighbours = |p: usize| {
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        (-1..=1isize).flat_map(move |dr| (-1..=1isize).map(move |dc| (r + dr, c + dc)))
    };
    let inside = |(r, c): (isize, isize)| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w;
    let mut depth: Vec<u32> = bits.iter().map(|&b| if b { u32::MAX } else { 0 }).collect();
    let mut queue = std::collections::VecDeque::new();
    for p in (0..bits.len()).filter(|&p| bits[p]) {
        if neighbours(p).any(|q| !inside(q) || !bits[q.0 as usize * w + q.1 as usize]) {
            depth[p] = 1;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        for q in neighbours(p).filter(|&q| inside(q)) {
            let q = q.0 as usize * w + q.1 as usize;
            if depth[q] == u32::MAX {
                depth[q] = depth[p] + 1;
                queue.push_back(q);
            }
        }
    }
    depth
}

fn shell_index(depth: u32, bins: usize) -> Option<usize> {
    (bins > 0 && depth > 0).then(|| (depth as usize).min(bins) - 1)
}

/// Pixels below -300 HU that connect to the image border through other such
/// pixels (4-connectivity).
fn exterior_air(values: &[f32], shape: Shape) -> Vec<bool> {
    let air: Vec<bool> = values.iter().map(|&v| v < -300.0).collect();
    let mask = BinaryMask::from_parts(shape, air.clone());
    let inside = crate::segmentation::fill_holes(&mask.not());
    air.iter().zip(inside.bits()).map(|(&a, &i)| a && !i).collect()
}

/// Fits `a + b·ρ²` (ρ = distance to the image center) by least squares on
/// `region` pixels valued in `[-300, 300)` HU and subtracts `b·(ρ² - mean ρ²)` from every pixel.
fn remove_radial_trend(values: &mut [f32], shape: Shape, region: &BinaryMask) {
    let (cy, cx) = ((shape.height as f64 - 1.0) / 2.0, (shape.width as f64 - 1.0) / 2.0);
    let scale = cy * cy + cx * cx;
    let rho2 = |p: usize| {
        let (y, x) = ((p / shape.width) as f64 - cy, (p % shape.width) as f64 - cx);
        (y * y + x * x) / scale
    };
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for (p, &v) in values.iter().enumerate() {
        if !region.bits()[p] || !(-300.0..300.0).contains(&v) {
            continue;
        }
        let (x, y) = (rho2(p), v as f64);
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let den = n * sxx - sx * sx;
    if n < 16.0 || den.abs() < 1e-12 {
        return;
    }
    let b = (n * sxy - sx * sy) / den;
    let mean_x = sx / n;
    for (p, v) in values.iter_mut().enumerate() {
        *v -= (b * (rho2(p) - mean_x)) as f32;
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as usize;
    let k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur_1d(src: &[f32], len: usize, stride: usize, count: usize, step: usize, k: &[f32]) -> Vec<f32> {
    let r = k.len() / 2;
    let mut out = vec![0f32; src.len()];
    for line in 0..count {
        let base = line * step;
        for i in 0..len {
            let mut acc = 0f32;
            for (j, &w) in k.iter().enumerate() {
                let t = (i + j).saturating_sub(r).min(len - 1);
                acc += w * src[base + t * stride];
            }
            out[base + i * stride] = acc;
        }
    }
    out
}

/// Unit-variance Gaussian field with correlation length `len_px`; white
/// noise when `len_px < 0.5`.
pub fn smooth_noise(shape: Shape, len_px: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f32> = (0..shape.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    if len_px < 0.5 {
        return white;
    }
    let k = gaussian_kernel(len_px / 2.0);
    let gain: f32 = k.iter().map(|w| w * w).sum();
    let (h, w) = (shape.height, shape.width);
    let rows = blur_1d(&white, w, 1, h, w, &k);
    let both = blur_1d(&rows, h, w, w, 1, &k);
    both.into_iter().map(|v| v / gain).collect()
}

/// Fits a translator on `cal_pairs` and translates one slice.
pub fn translate(
    cbct: Option<&ImageGrid>,
    prior: Option<&SegmentationPrior>,
    mode: TranslatorMode,
    cal_pairs: &[CalPair<'_>],
    cfg: &TranslatorConfig,
) -> Result<ImageGrid, TranslatorError> {
    let t = Translator::fit(
        cal_pairs,
        cfg,
        &BodySegConfig::default(),
        &BoneSegConfig::default(),
        &NormalizationSpec::default(),
    )?;
    t.translate(cbct, prior, mode)
}
