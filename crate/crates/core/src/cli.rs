//! The `ctconform` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | invalid arguments or configuration, or inputs a mode needs are missing |
//! | 3 | I/O failure or unreadable input file |
//! | 4 | empty body or empty evaluation mask |
//! | 5 | calibration infeasible or saturated |
//! | 6 | calibration digest, method or configuration mismatch |
//!
//! Every command prints the resolved configuration to stderr and
//! `config_digest = "<hex>"` followed by `key = value` summaries to stdout.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};
use crate::conformal::{
    calibrate_pw_crc, calibrate_pw_scp_pairs, heuristic_bounds, predict_crc, predict_scp, scp_rank, ConformalError,
    CrcItem, EvalMaskPolicy, IntervalField, Quantiles, Rank, ScpPair,
};
use crate::dataset::{DatasetManifest, Role, SliceGroup, SliceKey, SliceRecord};
use crate::grid::{BinaryMask, GridError, ImageGrid, Units};
use crate::harness::{
    fit_translator_pairs, generate_slices, run_fig3, run_table1, score_intervals, score_translation, HarnessError,
    StageTiming,
};
use crate::io::report::{write_report, ReportRow};
use crate::io::{
    export_pgm, read_calibration, read_grid, read_manifest, read_mask, resolve_path, to_hex, write_calibration,
    write_manifest, write_volume, Calibration, CalibrationArtifact, IoError, Method, Volume,
};
use crate::metrics::{uncertainty_map, MetricsError, MetricsReport, StratificationBins};
use crate::phantom::{perturb_prior, slice_seed, stream_seed, PerturbationLevel, PhantomError};
use crate::segmentation::{build_prior, extract_body_mask, SegmentationError, SegmentationPrior};
use crate::translator::{SamplerConfig, TranslatorError, TranslatorMode};

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_ARGS: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;
pub const EXIT_MISMATCH: i32 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "ctconform",
    version,
    about = "Segmentation priors and pixel-wise conformal intervals for CBCT-to-CT translation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic phantom data.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Extract body and bone masks from one CT volume.
    Segment(SegmentArgs),
    /// Translate every slice of a manifest and optionally draw ensemble samples.
    Translate(TranslateArgs),
    /// Fit a PW-SCP or PW-CRC calibration.
    Calibrate(CalibrateArgs),
    /// Write calibrated interval bounds for every slice of a manifest.
    Predict(PredictArgs),
    /// Score translations and calibrated intervals into a metrics CSV.
    Evaluate(EvaluateArgs),
    /// Apply an affine perturbation of a given level to prior masks.
    Perturb(PerturbArgs),
    /// Run a full experiment on phantom data.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    /// Generate CT, CBCT and truth-mask volumes plus `manifest.csv`.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of patients (>= 1).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub patients: u32,
    /// Slices per patient (>= 1).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub slices: u32,
    /// Run seed; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// CT volume (HU or normalized).
    #[arg(long, value_name = "V")]
    pub input: PathBuf,
    #[arg(long, value_name = "B")]
    pub out_body: PathBuf,
    #[arg(long, value_name = "O")]
    pub out_bone: PathBuf,
    /// Directory with `mask_body_<suffix>.vol` and `mask_bone_<suffix>.vol`,
    /// where `<suffix>` follows the first `_` of the input file stem (or no
    /// suffix: `mask_body.vol`); prints Dice against them.
    #[arg(long, value_name = "DIR")]
    pub truth_dir: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long, value_name = "M")]
    pub manifest: PathBuf,
    /// cbct, seg or c+seg; defaults to the config mode.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TranslatorMode>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Ensemble samples per slice (0 for none).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Sampler seed; defaults to the config sampler seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest the translator is fitted on; defaults to `--manifest`.
    #[arg(long, value_name = "F")]
    pub fit_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "M")]
    pub manifest: PathBuf,
    /// pw-scp, pw-scp-adj, pw-crc or pw-crc-adj.
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Miscoverage level; defaults to the config alpha (0.1).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_name = "CAL")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "CAL")]
    pub calib: PathBuf,
    #[arg(long, value_name = "M")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Also write uncertainty maps as PGM files here.
    #[arg(long, value_name = "DIR")]
    pub map_out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "M")]
    pub manifest: PathBuf,
    /// Base (or only) calibration.
    #[arg(long, value_name = "CAL")]
    pub calib: PathBuf,
    /// Second calibration with the other adjustment, filling the other
    /// base/adj columns.
    #[arg(long, value_name = "CAL")]
    pub calib_adj: Option<PathBuf>,
    /// Stratification edges in HU, e.g. "-200,150,350"; defaults to the
    /// config bins.
    #[arg(long, allow_hyphen_values = true)]
    pub bins: Option<String>,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long, value_name = "M")]
    pub manifest: PathBuf,
    /// Perturbation level, 0 to 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=4))]
    pub level: u8,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Table1Phantom,
    Fig3Noise,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Run seed; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validate and print the configuration without running.
    #[arg(long)]
    pub dry_run: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn parse_mode(s: &str) -> Result<TranslatorMode, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match e {
            IoError::DigestMismatch | IoError::MethodPayloadMismatch { .. } | IoError::UnknownMethod(_) => {
                EXIT_MISMATCH
            }
            IoError::Manifest(_) => EXIT_ARGS,
            _ => EXIT_IO,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_IO,
            _ => EXIT_ARGS,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<SegmentationError> for CliError {
    fn from(e: SegmentationError) -> Self {
        let code = match e {
            SegmentationError::EmptyBody => EXIT_EMPTY,
            SegmentationError::BadConfig(_) => EXIT_ARGS,
            _ => EXIT_INTERNAL,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ConformalError> for CliError {
    fn from(e: ConformalError) -> Self {
        let code = match e {
            ConformalError::Infeasible(_) => EXIT_INFEASIBLE,
            ConformalError::EmptyMask => EXIT_EMPTY,
            ConformalError::EmptyCalibration | ConformalError::BadAlpha(_) | ConformalError::TooFewSamples(_) => {
                EXIT_ARGS
            }
            _ => EXIT_INTERNAL,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<TranslatorError> for CliError {
    fn from(e: TranslatorError) -> Self {
        match e {
            TranslatorError::Segmentation(s) => s.into(),
            TranslatorError::ModeInputMissing { .. } | TranslatorError::BadConfig(_) => {
                CliError::new(EXIT_ARGS, e.to_string())
            }
            TranslatorError::EmptyCalibration => CliError::new(EXIT_ARGS, e.to_string()),
            _ => CliError::new(EXIT_INTERNAL, e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::EmptyMask | MetricsError::EmptySoftMask => EXIT_EMPTY,
            MetricsError::BadBins => EXIT_ARGS,
            _ => EXIT_INTERNAL,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        CliError::new(EXIT_ARGS, e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::new(EXIT_INTERNAL, e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(e) => e.into(),
            HarnessError::Phantom(e) => e.into(),
            HarnessError::Segmentation(e) => e.into(),
            HarnessError::Translator(e) => e.into(),
            HarnessError::Conformal(e) => e.into(),
            HarnessError::Metrics(e) => e.into(),
            HarnessError::Io(e) => e.into(),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGS } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Phantom(PhantomCommand::Gen(a)) => phantom_gen(a),
        Command::Segment(a) => segment(a),
        Command::Translate(a) => translate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Perturb(a) => perturb(a),
        Command::Bench(a) => bench(a),
    }
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load_or_default(arg.config.as_deref())?)
}

/// Validates and prints the resolved configuration.
fn announce(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    eprintln!("# resolved config\n{}", cfg.render());
    println!("config_digest = \"{}\"", cfg.digest_hex());
    Ok(())
}

fn arg_error(message: impl Into<String>) -> CliError {
    CliError::new(EXIT_ARGS, message)
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| {
        IoError::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// Manifest whose records carry absolute paths.
fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    let m = read_manifest(path)?;
    let records = m
        .into_records()
        .into_iter()
        .map(|mut r| {
            r.path = absolute(&resolve_path(path, &r.path))?;
            Ok(r)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(DatasetManifest::new(records).map_err(IoError::from)?)
}

fn slice_file(role: &str, key: &SliceKey, ext: &str) -> PathBuf {
    PathBuf::from(&key.patient_id).join(format!("{role}_{:03}.{ext}", key.slice_index))
}

fn read_record(r: Option<&SliceRecord>) -> Result<Option<ImageGrid>, CliError> {
    r.map(|r| read_grid(&r.path)).transpose().map_err(Into::into)
}

fn require<'a>(r: Option<&'a SliceRecord>, key: &SliceKey, role: Role) -> Result<&'a SliceRecord, CliError> {
    r.ok_or_else(|| arg_error(format!("slice {key} has no {role} record")))
}

/// Prior for a slice: its mask records when both are present, otherwise
/// extracted from the planning CT, otherwise from the CT.
fn slice_prior(cfg: &RunConfig, g: &SliceGroup<'_>) -> Result<Option<SegmentationPrior>, CliError> {
    if let (Some(body), Some(bone)) = (g.mask_body, g.mask_bone) {
        return Ok(Some(SegmentationPrior::new(
            read_mask(&bone.path)?,
            read_mask(&body.path)?,
        )?));
    }
    match g.pct.or(g.ct) {
        Some(r) => Ok(Some(build_prior(
            &read_grid(&r.path)?,
            &cfg.body,
            &cfg.bone,
            Some(&cfg.normalization),
        )?)),
        None => Ok(None),
    }
}

fn phantom_gen(a: GenArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    announce(&cfg)?;
    let mut records = Vec::new();
    for p in 0..a.patients as usize {
        for s in generate_slices(&cfg, "P", p, 1, a.slices as usize, cfg.seed)? {
            let key = SliceKey {
                patient_id: s.patient_id.clone(),
                slice_index: s.slice_index,
            };
            let files = [
                (Role::Ct, Volume::Grid(s.ct)),
                (Role::Cbct, Volume::Grid(s.cbct)),
                (Role::MaskBody, Volume::Mask(s.body_truth)),
                (Role::MaskBone, Volume::Mask(s.bone_truth)),
            ];
            for (role, vol) in files {
                let rel = slice_file(role.as_str(), &key, "vol");
                write_volume(&a.out.join(&rel), &vol)?;
                records.push(SliceRecord::new(&key.patient_id, key.slice_index, role, rel));
            }
        }
    }
    let manifest = DatasetManifest::new(records).map_err(IoError::from)?;
    let path = a.out.join("manifest.csv");
    write_manifest(&path, &manifest)?;
    println!("patients = {}", a.patients);
    println!("slices = {}", a.patients as u64 * a.slices as u64);
    println!("manifest = \"{}\"", path.display());
    Ok(())
}

fn truth_paths(input: &Path, dir: &Path) -> (PathBuf, PathBuf) {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let suffix = stem.split_once('_').map(|(_, s)| format!("_{s}")).unwrap_or_default();
    (
        dir.join(format!("mask_body{suffix}.vol")),
        dir.join(format!("mask_bone{suffix}.vol")),
    )
}

fn segment(a: SegmentArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    announce(&cfg)?;
    let grid = read_grid(&a.input)?;
    let prior = build_prior(&grid, &cfg.body, &cfg.bone, Some(&cfg.normalization))?;
    println!("body_px = {}", prior.body.count());
    println!("bone_px = {}", prior.bone.count());
    if let Some(dir) = &a.truth_dir {
        let (body_path, bone_path) = truth_paths(&a.input, dir);
        let body = read_mask(&body_path)?;
        let bone = read_mask(&bone_path)?;
        println!("dice_body = {}", crate::metrics::dice(&prior.body, &body)?);
        println!("dice_bone = {}", crate::metrics::dice(&prior.bone, &bone)?);
    }
    write_volume(&a.out_body, &Volume::Mask(prior.body))?;
    write_volume(&a.out_bone, &Volume::Mask(prior.bone))?;
    Ok(())
}

/// Inputs of one slice loaded for translation.
struct SliceInputs {
    key: SliceKey,
    cbct: Option<ImageGrid>,
    ct: Option<ImageGrid>,
    prior: Option<SegmentationPrior>,
}

fn load_inputs(cfg: &RunConfig, m: &DatasetManifest, mode: TranslatorMode) -> Result<Vec<SliceInputs>, CliError> {
    m.slices()
        .into_iter()
        .filter(|(_, g)| g.cbct.is_some() || g.ct.is_some() || g.pct.is_some() || g.mask_body.is_some())
        .map(|(key, g)| {
            Ok(SliceInputs {
                cbct: if mode.uses_cbct() { read_record(g.cbct)? } else { None },
                ct: read_record(g.ct)?,
                prior: if mode.uses_prior() { slice_prior(cfg, &g)? } else { None },
                key,
            })
        })
        .collect()
}

fn translate(a: TranslateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(mode) = a.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = a.seed {
        cfg.sampler.seed = seed;
    }
    if a.samples > 0 {
        cfg.sampler.k = a.samples.max(2);
    }
    announce(&cfg)?;
    let mode = cfg.mode;
    let manifest = load_manifest(&a.manifest)?;
    let fit_manifest = match &a.fit_manifest {
        Some(p) => load_manifest(p)?,
        None => manifest.clone(),
    };

    let fit_inputs: Vec<SliceInputs> = load_inputs(&cfg, &fit_manifest, mode)?
        .into_iter()
        .filter(|s| s.ct.is_some())
        .collect();
    let fit = fit_translator_pairs(
        &cfg,
        fit_inputs
            .iter()
            .map(|s| (s.cbct.as_ref(), s.ct.as_ref().expect("filtered"), s.prior.as_ref())),
    )?;

    let inputs = load_inputs(&cfg, &manifest, mode)?;
    if inputs.is_empty() {
        return Err(arg_error("manifest has no slices to translate"));
    }
    let outputs: Vec<(ImageGrid, Vec<ImageGrid>)> = inputs
        .par_iter()
        .map(|s| {
            let sct = fit.translate(s.cbct.as_ref(), s.prior.as_ref(), mode)?;
            let samples = if a.samples == 0 {
                Vec::new()
            } else {
                let sampler = SamplerConfig {
                    seed: stream_seed(slice_seed(cfg.sampler.seed, &s.key.patient_id, s.key.slice_index), 2),
                    ..cfg.sampler.clone()
                };
                let mut v = fit.sample_ensemble(s.cbct.as_ref(), s.prior.as_ref(), mode, &sampler)?;
                v.truncate(a.samples);
                v
            };
            Ok((sct, samples))
        })
        .collect::<Result<_, TranslatorError>>()?;

    let mut records: Vec<SliceRecord> = manifest
        .records()
        .iter()
        .filter(|r| r.role != Role::Sct && r.role != Role::Sample)
        .cloned()
        .collect();
    for (s, (sct, samples)) in inputs.iter().zip(outputs) {
        let rel = slice_file("sct", &s.key, "vol");
        write_volume(&a.out.join(&rel), &Volume::Grid(sct))?;
        records.push(SliceRecord::new(&s.key.patient_id, s.key.slice_index, Role::Sct, rel));
        for (k, sample) in samples.into_iter().enumerate() {
            let rel = PathBuf::from(&s.key.patient_id).join(format!("sample_{:03}_{k:02}.vol", s.key.slice_index));
            write_volume(&a.out.join(&rel), &Volume::Grid(sample))?;
            records.push(SliceRecord::sample(&s.key.patient_id, s.key.slice_index, k as u32, rel));
        }
    }
    let out_manifest = DatasetManifest::new(records).map_err(IoError::from)?;
    let path = a.out.join("manifest.csv");
    write_manifest(&path, &out_manifest)?;
    println!("mode = \"{}\"", mode.as_str());
    println!("slices = {}", inputs.len());
    println!("samples_per_slice = {}", a.samples);
    println!("manifest = \"{}\"", path.display());
    Ok(())
}

/// Smallest calibration count at the same patient count that leaves
/// saturation.
fn min_unsaturated_n_c(n_c: usize, patients: usize, alpha: f64, adjusted: bool) -> Option<usize> {
    (n_c..n_c.saturating_mul(1000).max(10_000))
        .find(|&n| matches!(scp_rank(n, n as f64 / patients as f64, alpha, adjusted), Rank::Index(_)))
}

/// Heuristic bounds from a slice's ensemble samples.
fn slice_bounds(cfg: &RunConfig, g: &SliceGroup<'_>, key: &SliceKey, q: (f64, f64)) -> Result<IntervalField, CliError> {
    if g.samples.len() < 2 {
        return Err(arg_error(format!(
            "slice {key} needs at least 2 sample records, has {}",
            g.samples.len()
        )));
    }
    let samples = g
        .samples
        .iter()
        .map(|r| Ok(read_grid(&r.path)?.to_normalized(&cfg.normalization)))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(heuristic_bounds(&samples, q.0, q.1)?)
}

fn slice_eval_mask(
    cfg: &RunConfig,
    policy: EvalMaskPolicy,
    g: &SliceGroup<'_>,
    ct: &ImageGrid,
) -> Result<BinaryMask, CliError> {
    Ok(match policy {
        EvalMaskPolicy::Full => BinaryMask::full(ct.height(), ct.width())?,
        EvalMaskPolicy::Body => match g.mask_body {
            Some(r) => read_mask(&r.path)?,
            None => extract_body_mask(ct, &cfg.body, Some(&cfg.normalization))?,
        },
    })
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    announce(&cfg)?;
    let manifest = load_manifest(&a.manifest)?;
    let slices = manifest.slices();
    let adjusted = a.method.is_adjusted();
    let patients = manifest.patient_count();
    let calibration = if a.method.is_crc() {
        let q = cfg.calibration.bound_quantiles;
        let loaded = slices
            .par_iter()
            .map(|(key, g)| {
                let ct = read_grid(&require(g.ct, key, Role::Ct)?.path)?;
                let mask = slice_eval_mask(&cfg, cfg.calibration.eval_mask, g, &ct)?;
                Ok((
                    slice_bounds(&cfg, g, key, q)?,
                    ct.to_normalized(&cfg.normalization),
                    mask,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let items: Vec<CrcItem<'_>> = loaded
            .iter()
            .map(|(bounds, ct, mask)| CrcItem { bounds, ct, mask })
            .collect();
        let c = calibrate_pw_crc(&items, patients, &cfg.crc_options(adjusted))?;
        println!("lambda_hat = {}", c.lambda_hat);
        Calibration::Crc(c)
    } else {
        let pairs = slices
            .par_iter()
            .map(|(key, g)| {
                Ok(ScpPair {
                    patient_id: key.patient_id.clone(),
                    sct: read_grid(&require(g.sct, key, Role::Sct)?.path)?.to_normalized(&cfg.normalization),
                    ct: read_grid(&require(g.ct, key, Role::Ct)?.path)?.to_normalized(&cfg.normalization),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let c = calibrate_pw_scp_pairs(&pairs, &cfg.scp_options(adjusted))?;
        match &c.qhat {
            Quantiles::Saturated { .. } => {
                let hint = min_unsaturated_n_c(c.n_c, c.patients, c.alpha, adjusted)
                    .map(|n| format!("; need n_c >= {n} at P = {}", c.patients))
                    .unwrap_or_default();
                return Err(CliError::new(
                    EXIT_INFEASIBLE,
                    format!("PW-SCP is saturated at every pixel: rank exceeds n_c = {}{hint}", c.n_c),
                ));
            }
            Quantiles::Field { values, .. } => {
                let n = values.len() as f64;
                let min = values.iter().copied().fold(f32::INFINITY, f32::min);
                let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
                if let Rank::Index(k) = c.rank() {
                    println!("rank = {k}");
                }
                println!("qhat_min = {min}");
                println!("qhat_mean = {mean}");
                println!("qhat_max = {max}");
            }
        }
        Calibration::Scp(c)
    };
    let (n_c, n_p) = match &calibration {
        Calibration::Scp(c) => (c.n_c, c.n_p),
        Calibration::Crc(c) => (c.n_c, c.n_p),
    };
    println!("method = \"{}\"", a.method.as_str());
    println!("n_c = {n_c}");
    println!("patients = {patients}");
    println!("n_p = {n_p}");
    write_calibration(
        &a.out,
        &CalibrationArtifact {
            calibration,
            spec: cfg.normalization,
            eval_mask_policy: cfg.calibration.eval_mask,
            config_digest: cfg.digest(),
        },
    )?;
    Ok(())
}

/// Loads a calibration and checks that the current configuration, with the
/// artifact's alpha, resolves to the digest it was fitted under.
fn load_calibration(path: &Path, cfg: &RunConfig) -> Result<CalibrationArtifact, CliError> {
    let art = read_calibration(path)?;
    let mut check = cfg.clone();
    check.alpha = art.calibration.alpha();
    if check.digest() != art.config_digest {
        return Err(CliError::new(
            EXIT_MISMATCH,
            format!(
                "{} was calibrated under config digest {} but the current config resolves to {}",
                path.display(),
                to_hex(&art.config_digest),
                check.digest_hex()
            ),
        ));
    }
    Ok(art)
}

fn predict_slice(
    cfg: &RunConfig,
    art: &CalibrationArtifact,
    key: &SliceKey,
    g: &SliceGroup<'_>,
) -> Result<IntervalField, CliError> {
    Ok(match &art.calibration {
        Calibration::Scp(c) => {
            let sct = read_grid(&require(g.sct, key, Role::Sct)?.path)?.to_normalized(&cfg.normalization);
            predict_scp(&sct, c)?
        }
        Calibration::Crc(c) => predict_crc(&slice_bounds(cfg, g, key, c.bound_quantiles)?, c)?,
    })
}

fn uncertainty_top(cfg: &RunConfig) -> f32 {
    (2.0 * cfg.normalization.half_range() + 1.0).ln() as f32
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    let art = load_calibration(&a.calib, &cfg)?;
    cfg.alpha = art.calibration.alpha();
    announce(&cfg)?;
    let manifest = load_manifest(&a.manifest)?;
    let slices: Vec<(SliceKey, SliceGroup<'_>)> = manifest
        .slices()
        .into_iter()
        .filter(|(_, g)| g.sct.is_some() || !g.samples.is_empty())
        .collect();
    if slices.is_empty() {
        return Err(arg_error("manifest has no sct or sample records to predict from"));
    }
    let top = uncertainty_top(&cfg);
    for (key, g) in &slices {
        let iv = predict_slice(&cfg, &art, key, g)?;
        write_volume(
            &a.out.join(slice_file("lower", key, "vol")),
            &Volume::Grid(iv.lower().clone()),
        )?;
        write_volume(
            &a.out.join(slice_file("upper", key, "vol")),
            &Volume::Grid(iv.upper().clone()),
        )?;
        if let Some(dir) = &a.map_out {
            let map = uncertainty_map(&iv, Units::Hu, &cfg.normalization);
            let name = format!("{}_{:03}_uncertainty.pgm", key.patient_id, key.slice_index);
            export_pgm(&map, &dir.join(name), (0.0, top))?;
        }
    }
    println!("method = \"{}\"", art.calibration.method().as_str());
    println!("slices = {}", slices.len());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    let mut arts = vec![load_calibration(&a.calib, &cfg)?];
    if let Some(p) = &a.calib_adj {
        arts.push(load_calibration(p, &cfg)?);
    }
    cfg.alpha = arts[0].calibration.alpha();
    if arts.len() == 2 {
        if arts[0].calibration.method().is_adjusted() == arts[1].calibration.method().is_adjusted() {
            return Err(arg_error(
                "--calib and --calib-adj must differ in adjustment (one base, one adjusted)",
            ));
        }
        if arts[0].calibration.alpha() != arts[1].calibration.alpha() {
            return Err(CliError::new(EXIT_MISMATCH, "the two calibrations use different alpha"));
        }
    }
    if let Some(bins) = &a.bins {
        cfg.bins = StratificationBins::parse(bins)?.edges().to_vec();
    }
    announce(&cfg)?;
    let bins = cfg.stratification()?;
    let manifest = load_manifest(&a.manifest)?;
    let slices: Vec<(SliceKey, SliceGroup<'_>)> = manifest.slices().into_iter().collect();

    let results: Vec<Result<ReportRow, CliError>> = slices
        .par_iter()
        .map(|(key, g)| {
            let ct = read_grid(&require(g.ct, key, Role::Ct)?.path)?.to_hu(&cfg.normalization);
            let sct = read_grid(&require(g.sct, key, Role::Sct)?.path)?.to_hu(&cfg.normalization);
            let truth = match slice_prior(&cfg, g)? {
                Some(p) => p,
                None => return Err(arg_error(format!("slice {key} has no prior source"))),
            };
            let mut report = score_translation(&cfg, &sct, &ct, &truth)?;
            for art in &arts {
                let side = art.calibration.method().is_adjusted() as usize;
                let iv = predict_slice(&cfg, art, key, g)?;
                let mask = slice_eval_mask(&cfg, art.eval_mask_policy, g, &ct)?;
                score_intervals(&cfg, &bins, &mut report, side, &iv, &ct, &mask)?;
            }
            Ok(ReportRow {
                patient_id: key.patient_id.clone(),
                slice_index: Some(key.slice_index),
                metrics: report,
            })
        })
        .collect();
    let mut rows = Vec::new();
    for (r, (key, _)) in results.into_iter().zip(&slices) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) if e.code == EXIT_EMPTY => eprintln!("warning: skipping slice {key}: {}", e.message),
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(CliError::new(EXIT_EMPTY, "every slice has an empty evaluation mask"));
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|r| r.metrics.clone()).collect();
    let all = MetricsReport::aggregate("ALL", &reports);
    print_summary(&all);
    rows.push(ReportRow {
        patient_id: "ALL".into(),
        slice_index: None,
        metrics: all,
    });
    write_report(&a.out, &rows, bins.groups())?;
    Ok(())
}

fn print_summary(m: &MetricsReport) {
    let opt = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{name} = {v}");
        }
    };
    opt("mae_hu", m.mae_hu);
    opt("soft_mae_hu", m.soft_mae_hu);
    opt("dice_body", m.dice_body);
    opt("dice_bone", m.dice_bone);
    for (side, tag) in ["base", "adj"].iter().enumerate() {
        opt(&format!("m_cov_{tag}"), m.marginal_coverage[side]);
        opt(&format!("p_cov_{tag}"), m.stratified_coverage_error[side]);
        opt(&format!("int_size_{tag}"), m.mean_interval_size[side]);
    }
    println!("slices = {}", m.slices);
}

fn perturb(a: PerturbArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config)?;
    announce(&cfg)?;
    let level = PerturbationLevel::new(a.level)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut replaced = Vec::new();
    let mut count = 0;
    for (key, g) in manifest.slices() {
        let body_rel = slice_file("mask_body", &key, "vol");
        let bone_rel = slice_file("mask_bone", &key, "vol");
        let (body_out, bone_out) = (a.out.join(&body_rel), a.out.join(&bone_rel));
        match (level.get(), g.mask_body, g.mask_bone) {
            (0, Some(body), Some(bone)) => {
                copy_file(&body.path, &body_out)?;
                copy_file(&bone.path, &bone_out)?;
            }
            _ => {
                let Some(prior) = slice_prior(&cfg, &g)? else {
                    continue;
                };
                let seed = stream_seed(slice_seed(a.seed, &key.patient_id, key.slice_index), 3);
                let p = perturb_prior(&prior, level, seed);
                write_volume(&body_out, &Volume::Mask(p.body))?;
                write_volume(&bone_out, &Volume::Mask(p.bone))?;
            }
        }
        replaced.push(SliceRecord::new(
            &key.patient_id,
            key.slice_index,
            Role::MaskBody,
            absolute(&body_out)?,
        ));
        replaced.push(SliceRecord::new(
            &key.patient_id,
            key.slice_index,
            Role::MaskBone,
            absolute(&bone_out)?,
        ));
        count += 1;
    }
    if count == 0 {
        return Err(arg_error("manifest has no slices with masks, planning CT or CT"));
    }
    let out_manifest = manifest.merged(replaced).map_err(IoError::from)?;
    let path = a.out.join("manifest.csv");
    write_manifest(&path, &out_manifest)?;
    println!("level = {}", level.get());
    println!("slices = {count}");
    println!("manifest = \"{}\"", path.display());
    Ok(())
}

fn copy_file(from: &Path, to: &Path) -> Result<(), CliError> {
    let bytes = std::fs::read(from).map_err(|e| IoError::Io {
        path: from.to_path_buf(),
        source: e,
    })?;
    if let Some(dir) = to.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(to, bytes).map_err(|e| {
        IoError::Io {
            path: to.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn print_timings(timings: &[StageTiming], total: Instant) {
    for t in timings {
        println!("stage \"{}\" = {:.3}", t.stage, t.elapsed.as_secs_f64());
    }
    println!("total_s = {:.3}", total.elapsed().as_secs_f64());
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    announce(&cfg)?;
    if a.dry_run {
        println!("dry_run = true");
        return Ok(());
    }
    let start = Instant::now();
    match a.experiment {
        Experiment::Table1Phantom => {
            let t = run_table1(&cfg, Some(&a.out))?;
            print_timings(&t.timings, start);
            println!("csv = \"{}\"", a.out.join("table1_phantom.csv").display());
            let methods: BTreeSet<&str> = t.rows.iter().map(|r| r.method).collect();
            println!("rows = {}", t.rows.len());
            println!("methods = {}", methods.len());
        }
        Experiment::Fig3Noise => {
            let f = run_fig3(&cfg, Some(&a.out))?;
            print_timings(&f.timings, start);
            println!("csv = \"{}\"", a.out.join("fig3_noise.csv").display());
            println!("rows = {}", f.rows.len());
        }
    }
    Ok(())
}
