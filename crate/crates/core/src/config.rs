//! Run configuration: one TOML document covering every tunable of a run.
//!
//! Every key is optional; missing keys take the built-in defaults and unknown
//! keys are rejected. Command-line flags override values read from a file.
//! The digest of the resolved configuration is stored in calibration
//! artifacts.
//!
//! ```toml
//! alpha = 0.1
//! seed = 7
//! mode = "c+seg"
//! bins = [-200.0, 150.0, 350.0]
//!
//! [normalization]
//! hu_min = -1000.0
//! hu_max = 2000.0
//!
//! [body]
//! threshold_hu = -300.0
//! closing_kernel = { shape = "disk", radius = 3 }
//!
//! [sampler]
//! k = 16
//!
//! [calibration]
//! eval_mask = "body"
//!
//! [bench]
//! patients = 16
//! slices = 6
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{CrcOptions, EvalMaskPolicy, LossAggregation, ScpOptions};
use crate::grid::NormalizationSpec;
use crate::io::{sha256, to_hex};
use crate::metrics::StratificationBins;
use crate::phantom::{DegradationSpec, PhantomSpec};
use crate::segmentation::{BodySegConfig, BoneSegConfig};
use crate::translator::{SamplerConfig, TranslatorConfig, TranslatorMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

/// Calibration settings shared by `calibrate`, `predict` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub eval_mask: EvalMaskPolicy,
    pub memory_budget_mb: usize,
    /// Loss bound `B` for PW-CRC.
    pub crc_b: f64,
    pub aggregation: LossAggregation,
    /// Ensemble quantile levels for the heuristic bounds.
    pub bound_quantiles: (f64, f64),
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            eval_mask: EvalMaskPolicy::Body,
            memory_budget_mb: 512,
            crc_b: 1.0,
            aggregation: LossAggregation::PerImage,
            bound_quantiles: (0.05, 0.95),
        }
    }
}

/// Size of the synthetic experiments run by `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    /// Calibration plus test patients.
    pub patients: usize,
    pub slices: usize,
    /// Patients used for conformal calibration; the rest are test patients.
    pub calibration_patients: usize,
    /// Extra patients, disjoint from the others, used to fit the translator.
    pub fit_patients: usize,
    /// Repetitions of each perturbation level in `fig3-noise`.
    pub noise_repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            patients: 16,
            slices: 6,
            calibration_patients: 10,
            fit_patients: 4,
            noise_repeats: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub seed: u64,
    pub mode: TranslatorMode,
    /// Stratification edges in HU.
    pub bins: Vec<f32>,
    pub normalization: NormalizationSpec,
    pub body: BodySegConfig,
    pub bone: BoneSegConfig,
    pub phantom: PhantomSpec,
    pub degradation: DegradationSpec,
    pub translator: TranslatorConfig,
    pub sampler: SamplerConfig,
    pub calibration: CalibrationSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.1,
            seed: 0,
            mode: TranslatorMode::CSeg,
            bins: StratificationBins::default().edges().to_vec(),
            normalization: NormalizationSpec::default(),
            body: BodySegConfig::default(),
            bone: BoneSegConfig::default(),
            phantom: PhantomSpec::default(),
            degradation: DegradationSpec::default(),
            translator: TranslatorConfig::default(),
            sampler: SamplerConfig::default(),
            calibration: CalibrationSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Reads `path` when given, otherwise starts from the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.stratification()?;
        self.normalization.validate().map_err(|e| bad(&e))?;
        self.body.validate().map_err(|e| bad(&e))?;
        self.bone.validate().map_err(|e| bad(&e))?;
        self.phantom.validate().map_err(|e| bad(&e))?;
        self.degradation.validate().map_err(|e| bad(&e))?;
        self.translator.validate().map_err(|e| bad(&e))?;
        self.sampler.validate().map_err(|e| bad(&e))?;
        let (lo, hi) = self.calibration.bound_quantiles;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "bound quantiles ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"
            )));
        }
        if !(self.calibration.crc_b > 0.0) || self.calibration.memory_budget_mb == 0 {
            return Err(ConfigError::Invalid(
                "crc_b and memory_budget_mb must be positive".into(),
            ));
        }
        let b = &self.bench;
        if b.patients < 2 || b.slices == 0 || b.calibration_patients == 0 || b.calibration_patients >= b.patients {
            return Err(ConfigError::Invalid(format!(
                "bench needs slices >= 1 and 0 < calibration_patients < patients, got {} of {} patients",
                b.calibration_patients, b.patients
            )));
        }
        if b.noise_repeats == 0 || b.fit_patients == 0 {
            return Err(ConfigError::Invalid(
                "noise_repeats and fit_patients must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn stratification(&self) -> Result<StratificationBins, ConfigError> {
        StratificationBins::new(self.bins.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn scp_options(&self, adjusted: bool) -> ScpOptions {
        ScpOptions {
            alpha: self.alpha,
            adjusted,
            eval_mask_policy: self.calibration.eval_mask,
            memory_budget_bytes: self.calibration.memory_budget_mb << 20,
        }
    }

    pub fn crc_options(&self, adjusted: bool) -> CrcOptions {
        CrcOptions {
            alpha: self.alpha,
            b: self.calibration.crc_b,
            adjusted,
            aggregation: self.calibration.aggregation,
            bound_quantiles: self.calibration.bound_quantiles,
        }
    }

    /// Canonical JSON encoding; the digest is computed over these bytes.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }

    pub fn digest(&self) -> [u8; 32] {
        sha256(&self.canonical_json())
    }

    pub fn digest_hex(&self) -> String {
        to_hex(&self.digest())
    }

    /// Resolved configuration as TOML.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c =
            RunConfig::from_toml_str("alpha = 0.2\nmode = \"seg\"\n[body]\nthreshold_hu = -400.0\n[sampler]\nk = 8\n")
                .unwrap();
        assert_eq!(c.alpha, 0.2);
        assert_eq!(c.mode, TranslatorMode::Seg);
        assert_eq!(c.body.threshold_hu, -400.0);
        assert_eq!(c.body.closing_kernel, BodySegConfig::default().closing_kernel);
        assert_eq!(c.sampler.k, 8);
        assert_eq!(c.bone, BoneSegConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("alpah = 0.1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[body]\nthreshold = 1.0"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[extra]\na = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn render_round_trips_and_digest_is_stable() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.mode = TranslatorMode::Cbct;
        let text = c.render();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        assert_ne!(RunConfig::default().digest(), c.digest());
        assert_eq!(c.digest_hex().len(), 64);
    }

    #[test]
    fn full_u64_seed_round_trips() {
        let c = RunConfig {
            seed: u64::MAX,
            ..Default::default()
        };
        let back = RunConfig::from_toml_str(&c.render()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.bins = vec![100.0, 0.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.bench.calibration_patients = c.bench.patients;
        assert!(c.validate().is_err());
    }
}
