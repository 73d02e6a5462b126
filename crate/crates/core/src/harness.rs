//! End-to-end phantom experiments.
//!
//! `table1-phantom` fits the translator on its own patients, then runs the
//! three modes through PW-SCP and PW-CRC (base and adjusted) on calibration
//! patients and scores the test patients. `fig3-noise` translates test
//! slices in SEG and C+SEG with priors perturbed at each level.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::conformal::{
    calibrate_pw_crc, calibrate_pw_scp_pairs, heuristic_bounds, predict_crc, predict_scp, ConformalError, CrcItem,
    EvalMaskPolicy, IntervalField, ScpPair,
};
use crate::grid::{BinaryMask, ImageGrid, Units};
use crate::io::{export_pgm, write_file, IoError};
use crate::metrics::{
    dice, group_coverage, marginal_coverage, masked_mae, mean_interval_size, soft_mae, stratified_error_from_counts,
    uncertainty_map, MetricsError, MetricsReport, StratificationBins,
};
use crate::phantom::{
    degrade_to_cbct, generate_phantom, perturb_prior, slice_seed, stream_seed, PerturbationLevel, PhantomError,
};
use crate::segmentation::{build_prior, SegmentationError, SegmentationPrior};
use crate::translator::{CalPair, SamplerConfig, Translator, TranslatorError, TranslatorMode};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Translator(#[from] TranslatorError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One synthetic slice: planning CT, its CBCT, analytic truth masks and the
/// prior extracted from the CT.
#[derive(Debug, Clone)]
pub struct PhantomSlice {
    pub patient_id: String,
    pub slice_index: u32,
    /// Seed derived from the run seed, patient id and slice index.
    pub seed: u64,
    pub ct: ImageGrid,
    pub cbct: ImageGrid,
    pub body_truth: BinaryMask,
    pub bone_truth: BinaryMask,
    pub prior: SegmentationPrior,
}

pub fn patient_id(prefix: &str, index: usize) -> String {
    format!("{prefix}{index:03}")
}

pub fn generate_slice(
    cfg: &RunConfig,
    patient_id: &str,
    slice_index: u32,
    seed: u64,
) -> Result<PhantomSlice, HarnessError> {
    let seed = slice_seed(seed, patient_id, slice_index);
    let phantom = generate_phantom(&cfg.phantom, seed)?;
    let cbct = degrade_to_cbct(&phantom.ct, &cfg.degradation, stream_seed(seed, 1))?;
    let prior = build_prior(&phantom.ct, &cfg.body, &cfg.bone, None)?;
    Ok(PhantomSlice {
        patient_id: patient_id.to_string(),
        slice_index,
        seed,
        ct: phantom.ct,
        cbct,
        body_truth: phantom.body_truth,
        bone_truth: phantom.bone_truth,
        prior,
    })
}

/// Slices `0..slices` of patients `{prefix}{first:03}` to
/// `{prefix}{first + count - 1:03}`, in patient-major order. Generation is
/// parallel; the output does not depend on the thread count.
pub fn generate_slices(
    cfg: &RunConfig,
    prefix: &str,
    first: usize,
    count: usize,
    slices: usize,
    seed: u64,
) -> Result<Vec<PhantomSlice>, HarnessError> {
    let keys: Vec<(String, u32)> = (first..first + count)
        .flat_map(|p| (0..slices as u32).map(move |s| (patient_id(prefix, p), s)))
        .collect();
    keys.par_iter()
        .map(|(pid, s)| generate_slice(cfg, pid, *s, seed))
        .collect()
}

pub fn fit_translator(cfg: &RunConfig, slices: &[PhantomSlice]) -> Result<Translator, HarnessError> {
    fit_translator_pairs(cfg, slices.iter().map(|s| (Some(&s.cbct), &s.ct, Some(&s.prior))))
}

/// Fits on `(cbct, ct, prior)` triples; a missing prior is extracted from
/// the CT.
pub fn fit_translator_pairs<'a>(
    cfg: &RunConfig,
    pairs: impl IntoIterator<Item = (Option<&'a ImageGrid>, &'a ImageGrid, Option<&'a SegmentationPrior>)>,
) -> Result<Translator, HarnessError> {
    let pairs: Vec<CalPair<'_>> = pairs
        .into_iter()
        .map(|(cbct, ct, prior)| CalPair { cbct, ct, prior })
        .collect();
    Ok(Translator::fit(
        &pairs,
        &cfg.translator,
        &cfg.body,
        &cfg.bone,
        &cfg.normalization,
    )?)
}

/// MAE over the truth body, SoftMAE and Dice of the prior re-extracted
/// from the translation against `truth`. A translation without any body
/// scores Dice 0 and no SoftMAE.
pub fn score_translation(
    cfg: &RunConfig,
    sct_hu: &ImageGrid,
    ct: &ImageGrid,
    truth: &SegmentationPrior,
) -> Result<MetricsReport, HarnessError> {
    let spec = &cfg.normalization;
    let mut report = MetricsReport {
        mae_hu: Some(masked_mae(sct_hu, ct, &truth.body, spec)?),
        slices: 1,
        ..Default::default()
    };
    match build_prior(sct_hu, &cfg.body, &cfg.bone, Some(spec)) {
        Ok(pred) => {
            report.dice_body = Some(dice(&pred.body, &truth.body)?);
            report.dice_bone = Some(dice(&pred.bone, &truth.bone)?);
            report.soft_mae_hu = match soft_mae(sct_hu, ct, truth, &pred, spec) {
                Ok(v) => Some(v),
                Err(MetricsError::EmptySoftMask) => None,
                Err(e) => return Err(e.into()),
            };
        }
        Err(SegmentationError::EmptyBody) => {
            report.dice_body = Some(0.0);
            report.dice_bone = Some(0.0);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(report)
}

/// [`score_translation`] against the slice's CT prior.
pub fn translation_metrics(
    cfg: &RunConfig,
    sct_hu: &ImageGrid,
    slice: &PhantomSlice,
) -> Result<MetricsReport, HarnessError> {
    score_translation(cfg, sct_hu, &slice.ct, &slice.prior)
}

pub fn eval_mask(cfg: &RunConfig, slice: &PhantomSlice) -> BinaryMask {
    match cfg.calibration.eval_mask {
        EvalMaskPolicy::Body => slice.prior.body.clone(),
        EvalMaskPolicy::Full => BinaryMask::from_parts(slice.ct.shape(), vec![true; slice.ct.shape().len()]),
    }
}

/// Sampler settings for one slice: the configured seed mixed with the slice
/// seed.
pub fn slice_sampler(cfg: &RunConfig, slice: &PhantomSlice) -> SamplerConfig {
    SamplerConfig {
        seed: stream_seed(slice.seed, 2) ^ cfg.sampler.seed,
        ..cfg.sampler.clone()
    }
}

/// A translated slice in normalized units with its heuristic bounds.
#[derive(Debug, Clone)]
pub struct Translated {
    pub sct: ImageGrid,
    pub bounds: IntervalField,
}

pub fn translate_with_bounds(
    cfg: &RunConfig,
    translator: &Translator,
    slices: &[PhantomSlice],
    mode: TranslatorMode,
) -> Result<Vec<Translated>, HarnessError> {
    let (q_lo, q_hi) = cfg.calibration.bound_quantiles;
    slices
        .par_iter()
        .map(|s| {
            let sct = translator.translate(Some(&s.cbct), Some(&s.prior), mode)?;
            let samples = translator.sample_ensemble(Some(&s.cbct), Some(&s.prior), mode, &slice_sampler(cfg, s))?;
            Ok(Translated {
                sct: sct.to_normalized(&cfg.normalization),
                bounds: heuristic_bounds(&samples, q_lo, q_hi)?,
            })
        })
        .collect()
}

/// Fills the coverage, stratified error, group coverage and size columns of
/// `side` (0 base, 1 adjusted) from one interval field. `ct` may be in
/// either unit; intervals are normalized.
pub fn score_intervals(
    cfg: &RunConfig,
    bins: &StratificationBins,
    report: &mut MetricsReport,
    side: usize,
    iv: &IntervalField,
    ct: &ImageGrid,
    mask: &BinaryMask,
) -> Result<(), HarnessError> {
    let ct = ct.to_normalized(&cfg.normalization);
    report.marginal_coverage[side] = Some(marginal_coverage(iv, &ct, mask)?);
    let groups = group_coverage(iv, &ct, mask, bins, &cfg.normalization)?;
    report.stratified_coverage_error[side] = stratified_error_from_counts(&groups, cfg.alpha).ok();
    report.group_coverage[side] = groups.iter().map(|g| g.rate()).collect();
    report.mean_interval_size[side] = Some(mean_interval_size(iv, mask)?);
    Ok(())
}

pub const TABLE1_METHODS: [&str; 2] = ["PW-SCP", "PW-CRC"];

#[derive(Debug, Clone)]
pub struct Table1Row {
    pub method: &'static str,
    pub mode: TranslatorMode,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct StageTiming {
    pub stage: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct Table1 {
    pub rows: Vec<Table1Row>,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct Fig3Row {
    pub level: u8,
    pub mode: TranslatorMode,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Fig3 {
    pub rows: Vec<Fig3Row>,
    pub timings: Vec<StageTiming>,
}

struct Timer(Vec<StageTiming>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(Vec::new(), Instant::now())
    }

    fn lap(&mut self, stage: impl Into<String>) {
        let now = Instant::now();
        self.0.push(StageTiming {
            stage: stage.into(),
            elapsed: now - self.1,
        });
        self.1 = now;
    }
}

fn write_pgm_maps(
    cfg: &RunConfig,
    dir: &Path,
    name: &str,
    intervals: &[(&str, &IntervalField)],
    sct_hu: &ImageGrid,
) -> Result<(), HarnessError> {
    export_pgm(sct_hu, &dir.join(format!("{name}_sct.pgm")), (-1000.0, 1000.0))?;
    let top = (2.0 * cfg.normalization.half_range() + 1.0).ln() as f32;
    for (tag, iv) in intervals {
        let map = uncertainty_map(iv, Units::Hu, &cfg.normalization);
        export_pgm(&map, &dir.join(format!("{name}_{tag}_uncertainty.pgm")), (0.0, top))?;
    }
    Ok(())
}

/// Runs the Table 1 matrix and, when `out` is given, writes
/// `table1_phantom.csv` and PGM maps of the first test slice under it.
pub fn run_table1(cfg: &RunConfig, out: Option<&Path>) -> Result<Table1, HarnessError> {
    cfg.validate()?;
    let b = &cfg.bench;
    let mut timer = Timer::new();
    let fit = generate_slices(cfg, "F", 0, b.fit_patients, b.slices, cfg.seed)?;
    let cal = generate_slices(cfg, "P", 0, b.calibration_patients, b.slices, cfg.seed)?;
    let test = generate_slices(
        cfg,
        "P",
        b.calibration_patients,
        b.patients - b.calibration_patients,
        b.slices,
        cfg.seed,
    )?;
    timer.lap("generate");
    let translator = fit_translator(cfg, &fit)?;
    timer.lap("fit translator");

    let bins = cfg.stratification()?;
    let cal_masks: Vec<BinaryMask> = cal.iter().map(|s| eval_mask(cfg, s)).collect();
    let test_masks: Vec<BinaryMask> = test.iter().map(|s| eval_mask(cfg, s)).collect();
    let cal_ct: Vec<ImageGrid> = cal.iter().map(|s| s.ct.to_normalized(&cfg.normalization)).collect();
    let mut scp_rows = Vec::new();
    let mut crc_rows = Vec::new();
    for mode in TranslatorMode::ALL {
        let cal_out = translate_with_bounds(cfg, &translator, &cal, mode)?;
        let test_out = translate_with_bounds(cfg, &translator, &test, mode)?;
        let base: Vec<MetricsReport> = test
            .par_iter()
            .zip(&test_out)
            .map(|(s, t)| translation_metrics(cfg, &t.sct.to_hu(&cfg.normalization), s))
            .collect::<Result<_, _>>()?;
        timer.lap(format!("translate {}", mode.as_str()));

        let pairs: Vec<ScpPair> = cal
            .iter()
            .zip(&cal_out)
            .zip(&cal_ct)
            .map(|((s, t), ct)| ScpPair {
                patient_id: s.patient_id.clone(),
                sct: t.sct.clone(),
                ct: ct.clone(),
            })
            .collect();
        let scp = [
            calibrate_pw_scp_pairs(&pairs, &cfg.scp_options(false))?,
            calibrate_pw_scp_pairs(&pairs, &cfg.scp_options(true))?,
        ];
        let items: Vec<CrcItem<'_>> = cal_out
            .iter()
            .zip(&cal_ct)
            .zip(&cal_masks)
            .map(|((t, ct), mask)| CrcItem {
                bounds: &t.bounds,
                ct,
                mask,
            })
            .collect();
        let crc = [
            calibrate_pw_crc(&items, b.calibration_patients, &cfg.crc_options(false))?,
            calibrate_pw_crc(&items, b.calibration_patients, &cfg.crc_options(true))?,
        ];
        timer.lap(format!("calibrate {}", mode.as_str()));

        let mut scp_reports = Vec::with_capacity(test.len());
        let mut crc_reports = Vec::with_capacity(test.len());
        for (i, (s, t)) in test.iter().zip(&test_out).enumerate() {
            let mut r_scp = base[i].clone();
            let mut r_crc = base[i].clone();
            let mut maps = Vec::new();
            for side in 0..2 {
                let iv_scp = predict_scp(&t.sct, &scp[side])?;
                let iv_crc = predict_crc(&t.bounds, &crc[side])?;
                score_intervals(cfg, &bins, &mut r_scp, side, &iv_scp, &s.ct, &test_masks[i])?;
                score_intervals(cfg, &bins, &mut r_crc, side, &iv_crc, &s.ct, &test_masks[i])?;
                if i == 0 {
                    maps.push((side, iv_scp, iv_crc));
                }
            }
            if let (Some(dir), true) = (out, i == 0) {
                let tagged: Vec<(String, &IntervalField)> = maps
                    .iter()
                    .flat_map(|(side, a, c)| {
                        let suffix = if *side == 0 { "base" } else { "adj" };
                        [(format!("pw-scp_{suffix}"), a), (format!("pw-crc_{suffix}"), c)]
                    })
                    .collect();
                let refs: Vec<(&str, &IntervalField)> = tagged.iter().map(|(n, iv)| (n.as_str(), *iv)).collect();
                let name = mode.as_str().replace('+', "");
                write_pgm_maps(cfg, &dir.join("maps"), &name, &refs, &t.sct.to_hu(&cfg.normalization))?;
            }
            scp_reports.push(r_scp);
            crc_reports.push(r_crc);
        }
        scp_rows.push(Table1Row {
            method: TABLE1_METHODS[0],
            mode,
            report: MetricsReport::aggregate(mode.label(), &scp_reports),
        });
        crc_rows.push(Table1Row {
            method: TABLE1_METHODS[1],
            mode,
            report: MetricsReport::aggregate(mode.label(), &crc_reports),
        });
        timer.lap(format!("evaluate {}", mode.as_str()));
    }
    scp_rows.extend(crc_rows);
    let table = Table1 {
        rows: scp_rows,
        timings: timer.0,
    };
    if let Some(dir) = out {
        write_file(&dir.join("table1_phantom.csv"), &encode_table1(&table.rows)?)?;
    }
    Ok(table)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> IoError {
    IoError::Csv(e.to_string())
}

pub const TABLE1_COLUMNS: [&str; 13] = [
    "method",
    "mode",
    "mae_hu",
    "soft_mae_hu",
    "dice_body",
    "dice_bone",
    "m_cov_base",
    "m_cov_adj",
    "p_cov_base",
    "p_cov_adj",
    "int_size_base",
    "int_size_adj",
    "n_slices",
];

pub fn encode_table1(rows: &[Table1Row]) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE1_COLUMNS).map_err(csv_err)?;
    for row in rows {
        let m = &row.report;
        w.write_record([
            row.method.to_string(),
            row.mode.label().to_string(),
            cell(m.mae_hu),
            cell(m.soft_mae_hu),
            cell(m.dice_body),
            cell(m.dice_bone),
            cell(m.marginal_coverage[0]),
            cell(m.marginal_coverage[1]),
            cell(m.stratified_coverage_error[0]),
            cell(m.stratified_coverage_error[1]),
            cell(m.mean_interval_size[0]),
            cell(m.mean_interval_size[1]),
            m.slices.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}

pub const FIG3_MODES: [TranslatorMode; 2] = [TranslatorMode::Seg, TranslatorMode::CSeg];

/// Translates every bench patient with perturbed priors. Each repeat uses
/// the same perturbation seed at every level, so levels differ only in
/// magnitude.
pub fn run_fig3(cfg: &RunConfig, out: Option<&Path>) -> Result<Fig3, HarnessError> {
    cfg.validate()?;
    let b = &cfg.bench;
    let mut timer = Timer::new();
    let fit = generate_slices(cfg, "F", 0, b.fit_patients, b.slices, cfg.seed)?;
    let test = generate_slices(cfg, "P", 0, b.patients, b.slices, cfg.seed)?;
    timer.lap("generate");
    let translator = fit_translator(cfg, &fit)?;
    timer.lap("fit translator");

    let mut rows = Vec::new();
    for level in PerturbationLevel::all() {
        for mode in FIG3_MODES {
            let jobs: Vec<(usize, usize)> = (0..test.len())
                .flat_map(|i| (0..b.noise_repeats).map(move |r| (i, r)))
                .collect();
            let reports: Vec<(usize, ImageGrid, MetricsReport)> = jobs
                .par_iter()
                .map(|&(i, r)| {
                    let s = &test[i];
                    let prior = perturb_prior(&s.prior, level, stream_seed(s.seed, 10 + r as u64));
                    let sct = translator.translate(Some(&s.cbct), Some(&prior), mode)?;
                    let report = translation_metrics(cfg, &sct, s)?;
                    Ok::<_, HarnessError>((i * b.noise_repeats + r, sct, report))
                })
                .collect::<Result<_, _>>()?;
            if let Some(dir) = out {
                let first = &reports[0].1;
                let name = format!("level{}_{}_sct.pgm", level.get(), mode.as_str().replace('+', ""));
                export_pgm(first, &dir.join("maps").join(name), (-1000.0, 1000.0))?;
            }
            let reports: Vec<MetricsReport> = reports.into_iter().map(|(_, _, r)| r).collect();
            rows.push(Fig3Row {
                level: level.get(),
                mode,
                report: MetricsReport::aggregate(mode.label(), &reports),
            });
        }
        timer.lap(format!("level {}", level.get()));
    }
    let fig = Fig3 { rows, timings: timer.0 };
    if let Some(dir) = out {
        write_file(&dir.join("fig3_noise.csv"), &encode_fig3(&fig.rows)?)?;
    }
    Ok(fig)
}

pub const FIG3_COLUMNS: [&str; 7] = ["level", "mode", "mae_hu", "soft_mae_hu", "dice_body", "dice_bone", "n"];

pub fn encode_fig3(rows: &[Fig3Row]) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FIG3_COLUMNS).map_err(csv_err)?;
    for row in rows {
        let m = &row.report;
        w.write_record([
            row.level.to_string(),
            row.mode.label().to_string(),
            cell(m.mae_hu),
            cell(m.soft_mae_hu),
            cell(m.dice_body),
            cell(m.dice_bone),
            m.slices.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(csv_err)
}
