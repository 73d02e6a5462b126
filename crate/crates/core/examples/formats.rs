//! Volume, manifest, calibration and NIfTI formats: write, read back, and
//! watch corrupted input fail with a typed error.

use ctconform::conformal::{EvalMaskPolicy, Quantiles, ScpCalibration};
use ctconform::dataset::{DatasetManifest, Role, SliceRecord};
use ctconform::io::nifti::build_nifti_bytes;
use ctconform::io::{
    decode_calibration, decode_nifti, read_manifest, read_volume, write_calibration, write_manifest, write_volume,
    Calibration, CalibrationArtifact, Volume,
};
use ctconform::{ImageGrid, NormalizationSpec, Shape, Units};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("ctconform-formats");
    std::fs::create_dir_all(&dir)?;

    // NIfTI-1: 3x2x2 int16 volume with slope 2, intercept -1000.
    let payload: Vec<u8> = (0..12i16).flat_map(|v| (v * 10).to_le_bytes()).collect();
    let nii = build_nifti_bytes(&[3, 2, 2], 4, 2.0, -1000.0, &payload);
    let slices = decode_nifti(&nii, 2)?;
    println!(
        "nifti: {} slices of {}x{}, first row {:?}",
        slices.len(),
        slices[0].height(),
        slices[0].width(),
        &slices[0].values()[..3]
    );
    println!("nifti truncated: {}", decode_nifti(&nii[..100], 2).unwrap_err());

    let grid = ImageGrid::new(2, 3, vec![-1000.0, 0.0, 40.0, 300.0, 1200.0, -50.0], Units::Hu)?;
    let vol = dir.join("slice.vol");
    write_volume(&vol, &Volume::Grid(grid.clone()))?;
    println!("volume round trip exact: {}", read_volume(&vol)? == Volume::Grid(grid));

    let manifest = DatasetManifest::new(vec![
        SliceRecord::new("P01", 0, Role::Ct, "P01/ct_0.vol"),
        SliceRecord::new("P01", 0, Role::Cbct, "P01/cbct_0.vol"),
        SliceRecord::new("P02", 0, Role::Ct, "P02/ct_0.vol"),
        SliceRecord::new("P02", 0, Role::Cbct, "P02/cbct_0.vol"),
    ])?;
    let csv = dir.join("manifest.csv");
    write_manifest(&csv, &manifest)?;
    println!(
        "manifest: {} records, {} patients",
        read_manifest(&csv)?.records().len(),
        manifest.patient_count()
    );

    let artifact = CalibrationArtifact {
        calibration: Calibration::Scp(ScpCalibration {
            qhat: Quantiles::Field {
                shape: Shape::new(1, 3),
                values: vec![0.01, 0.02, 0.05],
            },
            alpha: 0.1,
            n_c: 20,
            patients: 4,
            n_p: 5.0,
            adjusted: true,
            eval_mask_policy: EvalMaskPolicy::Body,
        }),
        spec: NormalizationSpec::default(),
        eval_mask_policy: EvalMaskPolicy::Body,
        config_digest: [7; 32],
    };
    let cal = dir.join("scp.cal");
    write_calibration(&cal, &artifact)?;
    let mut bytes = std::fs::read(&cal)?;
    println!(
        "calibration: {} bytes, method {}",
        bytes.len(),
        artifact.calibration.method().as_str()
    );
    bytes[40] ^= 1;
    println!("tampered: {}", decode_calibration(&bytes).unwrap_err());
    Ok(())
}
