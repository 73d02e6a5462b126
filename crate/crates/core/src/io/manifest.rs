//! Manifest CSV: `patient_id,slice_index,role,sample_index,path`.
//!
//! Relative paths are stored verbatim and resolved against the manifest's
//! directory with [`resolve_path`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, write_file, IoError};
use crate::dataset::{DatasetManifest, ManifestError, Role, SliceRecord};

pub const MANIFEST_HEADER: [&str; 5] = ["patient_id", "slice_index", "role", "sample_index", "path"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patient_id: String,
    slice_index: u32,
    role: String,
    sample_index: Option<u32>,
    path: String,
}

pub fn decode_manifest(bytes: &[u8]) -> Result<DatasetManifest, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = rdr.headers().map_err(|e| IoError::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(IoError::Csv(format!(
            "header must be {}, got {}",
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| IoError::Csv(e.to_string()))?;
        let role: Role = row.role.parse().map_err(|_| ManifestError::BadRole(row.role.clone()))?;
        records.push(SliceRecord {
            patient_id: row.patient_id,
            slice_index: row.slice_index,
            role,
            sample_index: row.sample_index,
            path: PathBuf::from(row.path),
        });
    }
    Ok(DatasetManifest::new(records)?)
}

pub fn encode_manifest(manifest: &DatasetManifest) -> Result<Vec<u8>, IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| IoError::Csv(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in manifest.records() {
        let path = r
            .path
            .to_str()
            .ok_or_else(|| IoError::Csv(format!("path {} is not UTF-8", r.path.display())))?;
        w.serialize(Row {
            patient_id: r.patient_id.clone(),
            slice_index: r.slice_index,
            role: r.role.as_str().to_string(),
            sample_index: r.sample_index,
            path: path.replace('\\', "/"),
        })
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| IoError::Csv(e.to_string()))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    decode_manifest(&read_file(path)?)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), IoError> {
    write_file(path, &encode_manifest(manifest)?)
}

/// Resolves a record path relative to the directory holding the manifest.
pub fn resolve_path(manifest_path: &Path, record_path: &Path) -> PathBuf {
    if record_path.is_absolute() {
        record_path.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new("")).join(record_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "patient_id,slice_index,role,sample_index,path\n\
                       p1,0,ct,,p1/ct_000.vol\n\
                       p1,0,cbct,,p1/cbct_000.vol\n\
                       p1,0,sample,1,p1/s1.vol\n\
                       p0,2,ct,,p0/ct_002.vol\n";

    #[test]
    fn round_trip_sorts_and_preserves_rows() {
        let m = decode_manifest(CSV.as_bytes()).unwrap();
        assert_eq!(m.records().len(), 4);
        assert_eq!(m.records()[0].patient_id, "p0");
        let bytes = encode_manifest(&m).unwrap();
        let again = decode_manifest(&bytes).unwrap();
        assert_eq!(again, m);
        assert_eq!(encode_manifest(&again).unwrap(), bytes);
        assert!(String::from_utf8(bytes).unwrap().contains("p1,0,ct,,p1/ct_000.vol"));
    }

    #[test]
    fn rejects_bad_rows() {
        let dup = format!("{CSV}p1,0,ct,,other.vol\n");
        assert!(matches!(
            decode_manifest(dup.as_bytes()),
            Err(IoError::Manifest(ManifestError::DuplicateRecord(_)))
        ));
        let unpaired = "patient_id,slice_index,role,sample_index,path\np,0,cbct,,a.vol\n";
        assert!(matches!(
            decode_manifest(unpaired.as_bytes()),
            Err(IoError::Manifest(ManifestError::MissingPair { .. }))
        ));
        let role = "patient_id,slice_index,role,sample_index,path\np,0,mri,,a.vol\n";
        assert!(matches!(
            decode_manifest(role.as_bytes()),
            Err(IoError::Manifest(ManifestError::BadRole(_)))
        ));
        assert!(matches!(decode_manifest(b"a,b\n1,2\n"), Err(IoError::Csv(_))));
        let idx = "patient_id,slice_index,role,sample_index,path\np,x,ct,,a.vol\n";
        assert!(matches!(decode_manifest(idx.as_bytes()), Err(IoError::Csv(_))));
    }

    #[test]
    fn resolves_relative_paths() {
        assert_eq!(
            resolve_path(Path::new("/data/run/manifest.csv"), Path::new("p1/ct.vol")),
            PathBuf::from("/data/run/p1/ct.vol")
        );
        assert_eq!(
            resolve_path(Path::new("manifest.csv"), Path::new("/abs/x.vol")),
            PathBuf::from("/abs/x.vol")
        );
    }
}
