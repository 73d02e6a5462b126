//! Patient-grouped slice records.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifestError {
    #[error("duplicate record for {0}")]
    DuplicateRecord(String),
    #[error("cbct record for patient {patient_id} slice {slice_index} has no matching ct record")]
    MissingPair { patient_id: String, slice_index: u32 },
    #[error("unknown role {0:?}")]
    BadRole(String),
    #[error("role {role} {problem}")]
    BadSampleIndex { role: Role, problem: &'static str },
    #[error("manifest has no records")]
    Empty,
}

/// What a slice file contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cbct,
    Ct,
    Pct,
    Sct,
    MaskBody,
    MaskBone,
    Sample,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Cbct,
        Role::Ct,
        Role::Pct,
        Role::Sct,
        Role::MaskBody,
        Role::MaskBone,
        Role::Sample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Cbct => "cbct",
            Role::Ct => "ct",
            Role::Pct => "pct",
            Role::Sct => "sct",
            Role::MaskBody => "mask_body",
            Role::MaskBone => "mask_bone",
            Role::Sample => "sample",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ManifestError::BadRole(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceRecord {
    pub patient_id: String,
    pub slice_index: u32,
    pub role: Role,
    pub sample_index: Option<u32>,
    pub path: PathBuf,
}

impl SliceRecord {
    pub fn new(patient_id: impl Into<String>, slice_index: u32, role: Role, path: impl Into<PathBuf>) -> Self {
        SliceRecord {
            patient_id: patient_id.into(),
            slice_index,
            role,
            sample_index: None,
            path: path.into(),
        }
    }

    pub fn sample(
        patient_id: impl Into<String>,
        slice_index: u32,
        sample_index: u32,
        path: impl Into<PathBuf>,
    ) -> Self {
        SliceRecord {
            patient_id: patient_id.into(),
            slice_index,
            role: Role::Sample,
            sample_index: Some(sample_index),
            path: path.into(),
        }
    }

    fn key(&self) -> RecordKey<'_> {
        (&self.patient_id, self.slice_index, self.role, self.sample_index)
    }

    pub fn slice_key(&self) -> SliceKey {
        SliceKey {
            patient_id: self.patient_id.clone(),
            slice_index: self.slice_index,
        }
    }
}

type RecordKey<'a> = (&'a String, u32, Role, Option<u32>);

/// Identifies one slice of one patient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SliceKey {
    pub patient_id: String,
    pub slice_index: u32,
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.patient_id, self.slice_index)
    }
}

/// All files of one slice, grouped by role.
#[derive(Debug, Clone, Default)]
pub struct SliceGroup<'a> {
    pub cbct: Option<&'a SliceRecord>,
    pub ct: Option<&'a SliceRecord>,
    pub pct: Option<&'a SliceRecord>,
    pub sct: Option<&'a SliceRecord>,
    pub mask_body: Option<&'a SliceRecord>,
    pub mask_bone: Option<&'a SliceRecord>,
    pub samples: Vec<&'a SliceRecord>,
}

/// Validated, deterministically ordered collection of slice records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    records: Vec<SliceRecord>,
}

impl DatasetManifest {
    /// Sorts by `(patient_id, slice_index, role, sample_index)` and checks
    /// uniqueness, sample indices and cbct/ct pairing.
    pub fn new(mut records: Vec<SliceRecord>) -> Result<Self, ManifestError> {
        if records.is_empty() {
            return Err(ManifestError::Empty);
        }
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        for pair in records.windows(2) {
            if pair[0].key() == pair[1].key() {
                let r = &pair[1];
                return Err(ManifestError::DuplicateRecord(format!(
                    "patient {} slice {} role {} sample {:?}",
                    r.patient_id, r.slice_index, r.role, r.sample_index
                )));
            }
        }
        for r in &records {
            match (r.role, r.sample_index) {
                (Role::Sample, None) => {
                    return Err(ManifestError::BadSampleIndex {
                        role: r.role,
                        problem: "requires a sample_index",
                    })
                }
                (role, Some(_)) if role != Role::Sample => {
                    return Err(ManifestError::BadSampleIndex {
                        role,
                        problem: "must not carry a sample_index",
                    })
                }
                _ => {}
            }
        }
        let cts: HashSet<(&str, u32)> = records
            .iter()
            .filter(|r| r.role == Role::Ct)
            .map(|r| (r.patient_id.as_str(), r.slice_index))
            .collect();
        for r in records.iter().filter(|r| r.role == Role::Cbct) {
            if !cts.contains(&(r.patient_id.as_str(), r.slice_index)) {
                return Err(ManifestError::MissingPair {
                    patient_id: r.patient_id.clone(),
                    slice_index: r.slice_index,
                });
            }
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[SliceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SliceRecord> {
        self.records
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    /// Number of distinct patients `P`.
    pub fn patient_count(&self) -> usize {
        self.patients().len()
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.records.iter().any(|r| r.role == role)
    }

    /// Groups records per slice in manifest order.
    pub fn slices(&self) -> BTreeMap<SliceKey, SliceGroup<'_>> {
        let mut out: BTreeMap<SliceKey, SliceGroup<'_>> = BTreeMap::new();
        for r in &self.records {
            let g = out.entry(r.slice_key()).or_default();
            match r.role {
                Role::Cbct => g.cbct = Some(r),
                Role::Ct => g.ct = Some(r),
                Role::Pct => g.pct = Some(r),
                Role::Sct => g.sct = Some(r),
                Role::MaskBody => g.mask_body = Some(r),
                Role::MaskBone => g.mask_bone = Some(r),
                Role::Sample => g.samples.push(r),
            }
        }
        out
    }

    /// Returns a manifest with `extra` merged in; records with the same key
    /// are replaced by the new ones.
    pub fn merged(&self, extra: Vec<SliceRecord>) -> Result<Self, ManifestError> {
        let replaced: HashSet<RecordKey<'_>> = extra.iter().map(|r| r.key()).collect();
        let mut records: Vec<SliceRecord> = self
            .records
            .iter()
            .filter(|r| !replaced.contains(&r.key()))
            .cloned()
            .collect();
        records.extend(extra);
        DatasetManifest::new(records)
    }

    /// Keeps only records whose role satisfies `keep`.
    pub fn filter_roles(&self, keep: impl Fn(Role) -> bool) -> Result<Self, ManifestError> {
        DatasetManifest::new(self.records.iter().filter(|r| keep(r.role)).cloned().collect())
    }
}
