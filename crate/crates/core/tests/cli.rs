use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctconform::cli::{EXIT_ARGS, EXIT_EMPTY, EXIT_INFEASIBLE, EXIT_IO, EXIT_MISMATCH};
use ctconform::config::RunConfig;
use ctconform::conformal::{
    heuristic_bounds, CrcCalibration, EvalMaskPolicy, LossAggregation, Quantiles, ScpCalibration,
};
use ctconform::dataset::{DatasetManifest, Role, SliceRecord};
use ctconform::io::report::REPORT_COLUMNS;
use ctconform::io::{
    read_grid, read_manifest, read_mask, resolve_path, write_calibration, write_manifest, write_volume, Calibration,
    CalibrationArtifact, Volume,
};
use ctconform::{ImageGrid, NormalizationSpec, Shape, Units};
use tempfile::TempDir;

fn ctconform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctconform"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> BTreeMap<String, String> {
    let out = ctconform(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    summary(&out)
}

fn summary(out: &Output) -> BTreeMap<String, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.trim_matches('"').to_string()))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, patients: u32, slices: u32, seed: u64) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "phantom",
        "gen",
        "--patients",
        &patients.to_string(),
        "--slices",
        &slices.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out.join("manifest.csv")
}

fn translate(manifest: &Path, out: &Path, mode: &str, samples: usize) -> PathBuf {
    ok(&[
        "translate",
        "--manifest",
        s(manifest),
        "--mode",
        mode,
        "--out",
        s(out),
        "--samples",
        &samples.to_string(),
        "--seed",
        "5",
    ]);
    out.join("manifest.csv")
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn records(manifest: &Path, role: Role) -> Vec<SliceRecord> {
    read_manifest(manifest)
        .unwrap()
        .records()
        .iter()
        .filter(|r| r.role == role)
        .map(|r| SliceRecord {
            path: resolve_path(manifest, &r.path),
            ..r.clone()
        })
        .collect()
}

fn artifact(calibration: Calibration) -> CalibrationArtifact {
    CalibrationArtifact {
        calibration,
        spec: NormalizationSpec::default(),
        eval_mask_policy: EvalMaskPolicy::Body,
        config_digest: RunConfig::default().digest(),
    }
}

fn scp(qhat: Quantiles) -> Calibration {
    Calibration::Scp(ScpCalibration {
        qhat,
        alpha: 0.1,
        n_c: 20,
        patients: 4,
        n_p: 5.0,
        adjusted: false,
        eval_mask_policy: EvalMaskPolicy::Body,
    })
}

#[test]
fn argument_errors_exit_2_and_io_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(&ctconform(&["--help"])), 0);
    assert_eq!(code(&ctconform(&["frobnicate"])), EXIT_ARGS);
    assert_eq!(
        code(&ctconform(&[
            "phantom",
            "gen",
            "--patients",
            "0",
            "--slices",
            "1",
            "--out",
            s(d)
        ])),
        EXIT_ARGS
    );
    assert_eq!(
        code(&ctconform(&[
            "phantom",
            "gen",
            "--patients",
            "1",
            "--slices",
            "0",
            "--out",
            s(d)
        ])),
        EXIT_ARGS
    );
    assert_eq!(
        code(&ctconform(&[
            "calibrate",
            "--manifest",
            "m.csv",
            "--method",
            "pw-xyz",
            "--out",
            "c.cal"
        ])),
        EXIT_ARGS
    );
    std::fs::write(d.join("bad.toml"), "alpah = 0.2\n").unwrap();
    assert_eq!(
        code(&ctconform(&[
            "bench",
            "--experiment",
            "table1-phantom",
            "--out",
            s(d),
            "--dry-run",
            "--config",
            s(&d.join("bad.toml"))
        ])),
        EXIT_ARGS
    );
    std::fs::write(d.join("alpha.toml"), "alpha = 1.5\n").unwrap();
    assert_eq!(
        code(&ctconform(&[
            "bench",
            "--experiment",
            "fig3-noise",
            "--out",
            s(d),
            "--dry-run",
            "--config",
            s(&d.join("alpha.toml"))
        ])),
        EXIT_ARGS
    );
    assert_eq!(
        code(&ctconform(&[
            "bench",
            "--experiment",
            "fig3-noise",
            "--out",
            s(d),
            "--dry-run",
            "--config",
            s(&d.join("missing.toml"))
        ])),
        EXIT_IO
    );
    assert_eq!(
        code(&ctconform(&[
            "segment",
            "--input",
            s(&d.join("missing.vol")),
            "--out-body",
            "b.vol",
            "--out-bone",
            "o.vol"
        ])),
        EXIT_IO
    );
    assert_eq!(
        code(&ctconform(&[
            "translate",
            "--manifest",
            s(&d.join("none.csv")),
            "--out",
            s(d)
        ])),
        EXIT_IO
    );
}

#[test]
fn dry_run_prints_config_and_digest() {
    let tmp = TempDir::new().unwrap();
    let out = ctconform(&[
        "bench",
        "--experiment",
        "table1-phantom",
        "--out",
        s(tmp.path()),
        "--dry-run",
        "--seed",
        "9",
    ]);
    assert_eq!(code(&out), 0);
    let stdout = summary(&out);
    let cfg = RunConfig {
        seed: 9,
        ..Default::default()
    };
    assert_eq!(stdout["config_digest"], cfg.digest_hex());
    assert_eq!(stdout["dry_run"], "true");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed = 9"));
    assert!(stderr.contains("[normalization]"));
    assert!(std::fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn phantom_gen_is_replay_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let m = gen(a.path(), 1, 1, 3);
    gen(b.path(), 1, 1, 3);
    gen(c.path(), 1, 1, 4);
    let manifest = read_manifest(&m).unwrap();
    assert_eq!(manifest.records().len(), 4);
    assert_eq!(manifest.patient_count(), 1);
    let fa = files(&a.path().join("data"));
    assert_eq!(fa.len(), 5);
    assert_eq!(fa, files(&b.path().join("data")));
    let fc = files(&c.path().join("data"));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fc.keys().collect::<Vec<_>>());
    assert_ne!(fa, fc);
}

#[test]
fn segment_writes_masks_and_reports_dice() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    gen(d, 1, 1, 11);
    let ct = d.join("data/P000/ct_000.vol");
    let (body, bone) = (d.join("body.vol"), d.join("bone.vol"));
    let out = ok(&[
        "segment",
        "--input",
        s(&ct),
        "--out-body",
        s(&body),
        "--out-bone",
        s(&bone),
        "--truth-dir",
        s(&d.join("data/P000")),
    ]);
    assert!(out["dice_body"].parse::<f64>().unwrap() > 0.95);
    assert!(out["dice_bone"].parse::<f64>().unwrap() > 0.8);
    let (body, bone) = (read_mask(&body).unwrap(), read_mask(&bone).unwrap());
    assert!(bone.is_subset_of(&body));
    assert_eq!(out["body_px"], body.count().to_string());

    let air = d.join("air.vol");
    write_volume(
        &air,
        &Volume::Grid(ImageGrid::filled(32, 32, -1000.0, Units::Hu).unwrap()),
    )
    .unwrap();
    let r = ctconform(&[
        "segment",
        "--input",
        s(&air),
        "--out-body",
        s(&d.join("b2.vol")),
        "--out-bone",
        s(&d.join("o2.vol")),
    ]);
    assert_eq!(code(&r), EXIT_EMPTY);
    assert!(!d.join("b2.vol").exists());
}

#[test]
fn translate_modes_and_inputs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 2, 1, 21);

    let no_cbct: Vec<SliceRecord> = read_manifest(&m)
        .unwrap()
        .records()
        .iter()
        .filter(|r| r.role != Role::Cbct)
        .cloned()
        .collect();
    let seg_manifest = d.join("data/seg_only.csv");
    write_manifest(&seg_manifest, &DatasetManifest::new(no_cbct).unwrap()).unwrap();
    let out = translate(&seg_manifest, &d.join("seg"), "seg", 0);
    assert!(records(&out, Role::Sample).is_empty());
    assert_eq!(records(&out, Role::Sct).len(), 2);

    let r = ctconform(&[
        "translate",
        "--manifest",
        s(&seg_manifest),
        "--mode",
        "cbct",
        "--out",
        s(&d.join("x")),
    ]);
    assert_eq!(code(&r), EXIT_ARGS);
    let r = ctconform(&[
        "translate",
        "--manifest",
        s(&seg_manifest),
        "--mode",
        "c+seg",
        "--out",
        s(&d.join("x")),
    ]);
    assert_eq!(code(&r), EXIT_ARGS);

    let out = translate(&m, &d.join("cseg"), "c+seg", 3);
    assert_eq!(records(&out, Role::Sample).len(), 6);
    for sct in records(&out, Role::Sct) {
        let body = records(&out, Role::MaskBody)
            .into_iter()
            .find(|r| r.slice_key() == sct.slice_key())
            .unwrap();
        let (sct, body) = (read_grid(&sct.path).unwrap(), read_mask(&body.path).unwrap());
        assert_eq!(sct.units(), Units::Hu);
        for (v, inside) in sct.values().iter().zip(body.bits()) {
            if !inside {
                assert_eq!(*v, -1000.0);
            }
        }
    }
    let again = translate(&m, &d.join("cseg2"), "c+seg", 3);
    let strip = |dir: &str| {
        let mut f = files(&d.join(dir));
        f.remove(Path::new("manifest.csv"));
        f
    };
    assert_eq!(strip("cseg"), strip("cseg2"));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().replace("cseg/", "cseg2/"),
        std::fs::read_to_string(&again).unwrap().replace("cseg/", "cseg2/"),
    );
}

#[test]
fn calibrate_predict_evaluate_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 4, 3, 31);
    let t = translate(&m, &d.join("t"), "c+seg", 4);

    let cal = |method: &str, name: &str| {
        let path = d.join(name);
        let out = ok(&[
            "calibrate",
            "--manifest",
            s(&t),
            "--method",
            method,
            "--alpha",
            "0.3",
            "--out",
            s(&path),
        ]);
        (out, path)
    };
    let (scp_base, scp_base_path) = cal("pw-scp", "scp.cal");
    let (scp_adj, scp_adj_path) = cal("pw-scp-adj", "scp_adj.cal");
    assert_eq!(scp_base["n_c"], "12");
    assert_eq!(scp_base["patients"], "4");
    assert_eq!(scp_adj["n_p"], "3");
    assert_eq!(scp_base["rank"], "10");
    assert_eq!(scp_adj["rank"], "11");
    let f = |m: &BTreeMap<String, String>, k: &str| m[k].parse::<f64>().unwrap();
    assert!(f(&scp_adj, "qhat_min") >= f(&scp_base, "qhat_min"));
    assert!(f(&scp_adj, "qhat_mean") >= f(&scp_base, "qhat_mean"));

    let replay = d.join("replay.cal");
    ok(&[
        "calibrate",
        "--manifest",
        s(&t),
        "--method",
        "pw-scp",
        "--alpha",
        "0.3",
        "--out",
        s(&replay),
    ]);
    assert_eq!(std::fs::read(&replay).unwrap(), std::fs::read(&scp_base_path).unwrap());

    let (crc_base, crc_base_path) = cal("pw-crc", "crc.cal");
    let (crc_adj, crc_adj_path) = cal("pw-crc-adj", "crc_adj.cal");
    assert!(f(&crc_adj, "lambda_hat") >= f(&crc_base, "lambda_hat"));

    let pred = d.join("pred");
    let maps = d.join("maps");
    let out = ok(&[
        "predict",
        "--calib",
        s(&scp_base_path),
        "--manifest",
        s(&t),
        "--out",
        s(&pred),
        "--map-out",
        s(&maps),
    ]);
    assert_eq!(out["slices"], "12");
    let lower = read_grid(&pred.join("P002/lower_001.vol")).unwrap();
    let upper = read_grid(&pred.join("P002/upper_001.vol")).unwrap();
    assert_eq!(lower.units(), Units::Normalized);
    assert!(lower.values().iter().zip(upper.values()).all(|(l, u)| l <= u));
    let pgm = std::fs::read(maps.join("P002_001_uncertainty.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n128 128\n255\n"));

    let report = |base: &Path, adj: &Path, name: &str| {
        let path = d.join(name);
        ok(&[
            "evaluate",
            "--manifest",
            s(&t),
            "--calib",
            s(base),
            "--calib-adj",
            s(adj),
            "--bins",
            "-200,150,350",
            "--out",
            s(&path),
        ]);
        path
    };
    let csv_path = report(&scp_base_path, &scp_adj_path, "scp.csv");
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..13], &REPORT_COLUMNS);
    assert_eq!(header.len(), 13 + 8);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 13);
    let all = rows.last().unwrap();
    assert_eq!(&all[0], "ALL");
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in &rows {
        let v = |name: &str| row[col(name)].parse::<f64>().unwrap();
        assert!(v("m_cov_adj") >= v("m_cov_base"));
        assert!(v("int_size_adj") >= v("int_size_base"));
    }
    assert_eq!(&all[col("n_slices")], "12");
    assert_eq!(
        std::fs::read_to_string(report(&scp_base_path, &scp_adj_path, "scp2.csv")).unwrap(),
        text
    );

    let crc_csv = std::fs::read_to_string(report(&crc_base_path, &crc_adj_path, "crc.csv")).unwrap();
    assert!(crc_csv.lines().last().unwrap().starts_with("ALL,,"));

    let r = ctconform(&[
        "evaluate",
        "--manifest",
        s(&t),
        "--calib",
        s(&scp_base_path),
        "--calib-adj",
        s(&crc_base_path),
        "--out",
        s(&d.join("x.csv")),
    ]);
    assert_eq!(code(&r), EXIT_ARGS);
}

#[test]
fn infeasible_and_saturated_calibrations_exit_5() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 3, 1, 41);
    let t = translate(&m, &d.join("t"), "c+seg", 2);
    let r = ctconform(&[
        "calibrate",
        "--manifest",
        s(&t),
        "--method",
        "pw-crc",
        "--alpha",
        "0.1",
        "--out",
        s(&d.join("c.cal")),
    ]);
    assert_eq!(code(&r), EXIT_INFEASIBLE);
    assert!(String::from_utf8_lossy(&r.stderr).contains("n_c"));
    assert!(!d.join("c.cal").exists());
    let r = ctconform(&[
        "calibrate",
        "--manifest",
        s(&t),
        "--method",
        "pw-scp",
        "--alpha",
        "0.1",
        "--out",
        s(&d.join("s.cal")),
    ]);
    assert_eq!(code(&r), EXIT_INFEASIBLE);
    assert!(String::from_utf8_lossy(&r.stderr).contains("need n_c >= 9"));
}

#[test]
fn tampered_or_foreign_calibration_exits_6() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 2, 1, 51);
    let t = translate(&m, &d.join("t"), "seg", 0);
    let cal = d.join("zero.cal");
    write_calibration(
        &cal,
        &artifact(scp(Quantiles::Field {
            shape: Shape::new(128, 128),
            values: vec![0.0; 128 * 128],
        })),
    )
    .unwrap();
    ok(&[
        "predict",
        "--calib",
        s(&cal),
        "--manifest",
        s(&t),
        "--out",
        s(&d.join("p")),
    ]);

    let mut raw = std::fs::read(&cal).unwrap();
    raw[200] ^= 0x40;
    let tampered = d.join("tampered.cal");
    std::fs::write(&tampered, raw).unwrap();
    let r = ctconform(&[
        "predict",
        "--calib",
        s(&tampered),
        "--manifest",
        s(&t),
        "--out",
        s(&d.join("p2")),
    ]);
    assert_eq!(code(&r), EXIT_MISMATCH);

    std::fs::write(d.join("other.toml"), "[body]\nthreshold_hu = -350.0\n").unwrap();
    let r = ctconform(&[
        "predict",
        "--calib",
        s(&cal),
        "--manifest",
        s(&t),
        "--out",
        s(&d.join("p3")),
        "--config",
        s(&d.join("other.toml")),
    ]);
    assert_eq!(code(&r), EXIT_MISMATCH);
    assert!(String::from_utf8_lossy(&r.stderr).contains("config digest"));
}

#[test]
fn degenerate_intervals_give_all_zero_maps() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 1, 2, 61);
    let t = translate(&m, &d.join("t"), "c+seg", 0);
    let cal = d.join("zero.cal");
    write_calibration(
        &cal,
        &artifact(scp(Quantiles::Field {
            shape: Shape::new(128, 128),
            values: vec![0.0; 128 * 128],
        })),
    )
    .unwrap();
    let maps = d.join("maps");
    ok(&[
        "predict",
        "--calib",
        s(&cal),
        "--manifest",
        s(&t),
        "--out",
        s(&d.join("p")),
        "--map-out",
        s(&maps),
    ]);
    for name in ["P000_000_uncertainty.pgm", "P000_001_uncertainty.pgm"] {
        let pgm = std::fs::read(maps.join(name)).unwrap();
        let header = b"P5\n128 128\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert!(pgm[header.len()..].iter().all(|&b| b == 0));
        assert_eq!(pgm.len(), header.len() + 128 * 128);
    }
    let lower = read_grid(&d.join("p/P000/lower_000.vol")).unwrap();
    let upper = read_grid(&d.join("p/P000/upper_000.vol")).unwrap();
    assert_eq!(lower, upper);
}

#[test]
fn zero_lambda_crc_returns_the_heuristic_bounds() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 1, 1, 71);
    let t = translate(&m, &d.join("t"), "c+seg", 5);
    let cal = d.join("crc0.cal");
    write_calibration(
        &cal,
        &artifact(Calibration::Crc(CrcCalibration {
            lambda_hat: 0.0,
            alpha: 0.1,
            b: 1.0,
            n_c: 20,
            patients: 20,
            n_p: 1.0,
            adjusted: false,
            aggregation: LossAggregation::PerImage,
            bound_quantiles: (0.0, 1.0),
        })),
    )
    .unwrap();
    ok(&[
        "predict",
        "--calib",
        s(&cal),
        "--manifest",
        s(&t),
        "--out",
        s(&d.join("p")),
    ]);
    let samples: Vec<ImageGrid> = records(&t, Role::Sample)
        .iter()
        .map(|r| read_grid(&r.path).unwrap())
        .collect();
    assert_eq!(samples.len(), 5);
    let expected = heuristic_bounds(&samples, 0.0, 1.0).unwrap();
    assert_eq!(&read_grid(&d.join("p/P000/lower_000.vol")).unwrap(), expected.lower());
    assert_eq!(&read_grid(&d.join("p/P000/upper_000.vol")).unwrap(), expected.upper());
}

#[test]
fn perfect_translation_with_full_range_intervals() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 2, 1, 81);
    let mut recs: Vec<SliceRecord> = read_manifest(&m).unwrap().into_records();
    let cts: Vec<SliceRecord> = recs.iter().filter(|r| r.role == Role::Ct).cloned().collect();
    recs.extend(cts.into_iter().map(|r| SliceRecord { role: Role::Sct, ..r }));
    let perfect = d.join("data/perfect.csv");
    write_manifest(&perfect, &DatasetManifest::new(recs).unwrap()).unwrap();
    let cal = d.join("full.cal");
    write_calibration(
        &cal,
        &artifact(scp(Quantiles::Saturated {
            shape: Shape::new(128, 128),
        })),
    )
    .unwrap();
    let out = ok(&[
        "evaluate",
        "--manifest",
        s(&perfect),
        "--calib",
        s(&cal),
        "--out",
        s(&d.join("r.csv")),
    ]);
    assert_eq!(out["mae_hu"], "0");
    assert_eq!(out["soft_mae_hu"], "0");
    assert_eq!(out["m_cov_base"], "1");
    assert_eq!(out["dice_body"], "1");
    assert_eq!(out["slices"], "2");
    assert!(!out.contains_key("m_cov_adj"));
}

#[test]
fn evaluate_with_only_empty_masks_exits_4() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let air = d.join("air.vol");
    write_volume(
        &air,
        &Volume::Grid(ImageGrid::filled(16, 16, -1000.0, Units::Hu).unwrap()),
    )
    .unwrap();
    let recs = vec![
        SliceRecord::new("A", 0, Role::Ct, &air),
        SliceRecord::new("A", 0, Role::Sct, &air),
    ];
    let manifest = d.join("m.csv");
    write_manifest(&manifest, &DatasetManifest::new(recs).unwrap()).unwrap();
    let cal = d.join("full.cal");
    write_calibration(
        &cal,
        &artifact(scp(Quantiles::Saturated {
            shape: Shape::new(16, 16),
        })),
    )
    .unwrap();
    let r = ctconform(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--calib",
        s(&cal),
        "--out",
        s(&d.join("r.csv")),
    ]);
    assert_eq!(code(&r), EXIT_EMPTY);
    assert!(!d.join("r.csv").exists());
}

#[test]
fn perturb_levels_and_seeds() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let m = gen(d, 2, 1, 91);
    let r = ctconform(&[
        "perturb",
        "--manifest",
        s(&m),
        "--level",
        "5",
        "--seed",
        "1",
        "--out",
        s(&d.join("x")),
    ]);
    assert_eq!(code(&r), EXIT_ARGS);

    ok(&[
        "perturb",
        "--manifest",
        s(&m),
        "--level",
        "0",
        "--seed",
        "1",
        "--out",
        s(&d.join("l0")),
    ]);
    for p in ["P000", "P001"] {
        for f in ["mask_body_000.vol", "mask_bone_000.vol"] {
            assert_eq!(
                std::fs::read(d.join("l0").join(p).join(f)).unwrap(),
                std::fs::read(d.join("data").join(p).join(f)).unwrap()
            );
        }
    }

    ok(&[
        "perturb",
        "--manifest",
        s(&m),
        "--level",
        "3",
        "--seed",
        "1",
        "--out",
        s(&d.join("a")),
    ]);
    ok(&[
        "perturb",
        "--manifest",
        s(&m),
        "--level",
        "3",
        "--seed",
        "1",
        "--out",
        s(&d.join("b")),
    ]);
    ok(&[
        "perturb",
        "--manifest",
        s(&m),
        "--level",
        "3",
        "--seed",
        "2",
        "--out",
        s(&d.join("c")),
    ]);
    let strip = |dir: &str| {
        let mut f = files(&d.join(dir));
        f.remove(Path::new("manifest.csv"));
        f
    };
    assert_eq!(strip("a"), strip("b"));
    assert_ne!(strip("a"), strip("c"));
    let ma = read_manifest(&d.join("a/manifest.csv")).unwrap();
    let mc = read_manifest(&d.join("c/manifest.csv")).unwrap();
    let shape = |m: &DatasetManifest| m.records().iter().map(|r| (r.slice_key(), r.role)).collect::<Vec<_>>();
    assert_eq!(shape(&ma), shape(&mc));
    assert_eq!(shape(&ma), shape(&read_manifest(&m).unwrap()));
    for r in ma.records().iter().filter(|r| r.role == Role::MaskBody) {
        assert!(r.path.starts_with(d.join("a")));
    }
}

#[test]
fn bench_table1_on_a_small_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = d.join("small.toml");
    std::fs::write(
        &cfg,
        "alpha = 0.4\n[phantom]\nheight = 64\nwidth = 64\nn_bone_rings = 1\n\
         [bench]\npatients = 3\nslices = 4\ncalibration_patients = 2\nfit_patients = 1\nnoise_repeats = 1\n",
    )
    .unwrap();
    let out = ok(&[
        "bench",
        "--experiment",
        "table1-phantom",
        "--out",
        s(&d.join("b")),
        "--config",
        s(&cfg),
        "--seed",
        "3",
    ]);
    assert_eq!(out["rows"], "6");
    assert_eq!(out["methods"], "2");
    assert!(out.keys().any(|k| k.starts_with("stage ")));
    let text = std::fs::read_to_string(d.join("b/table1_phantom.csv")).unwrap();
    let modes: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["CBCT", "SEG", "C+SEG", "CBCT", "SEG", "C+SEG"]);
}
