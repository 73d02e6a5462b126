//! Segmentation priors, pixel-wise conformal prediction intervals and
//! evaluation metrics for CBCT-to-CT translation.
//!
//! The crate is organised around the slice pipeline:
//!
//! - [`grid`]: image/mask grids, HU normalization, center cropping;
//! - [`dataset`]: patient-grouped manifests;
//! - [`segmentation`]: body and bone priors from a planning CT;
//! - [`phantom`]: procedural CT/CBCT pairs and affine prior perturbation;
//! - [`translator`]: CBCT / SEG / C+SEG translator stubs and ensemble sampling;
//! - [`conformal`]: PW-SCP and PW-CRC calibration, with patient-level adjustment;
//! - [`metrics`]: MAE, SoftMAE, Dice, coverage and interval size;
//! - [`io`]: volume, manifest, calibration, NIfTI and PGM formats;
//! - [`config`] and [`harness`]: run configuration and end-to-end experiments.

pub mod cli;
pub mod config;
pub mod conformal;
pub mod dataset;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod segmentation;
pub mod translator;

pub use grid::{BinaryMask, ImageGrid, NormalizationSpec, Shape, Units};
