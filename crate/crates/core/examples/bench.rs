//! A reduced Table 1 run: every translator mode with PW-SCP and PW-CRC,
//! base and patient-adjusted, on phantom patients.
//!
//! ```sh
//! cargo run --release --example bench -- /tmp/table1
//! ```

use std::path::PathBuf;

use ctconform::config::RunConfig;
use ctconform::harness::run_table1;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: Option<PathBuf> = std::env::args().nth(1).map(PathBuf::from);
    let mut cfg = RunConfig {
        seed: 1,
        ..Default::default()
    };
    cfg.bench.patients = 13;
    cfg.bench.calibration_patients = 10;
    cfg.bench.slices = 3;
    cfg.sampler.k = 8;

    let table = run_table1(&cfg, out.as_deref())?;
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{:<8} {:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "method", "mode", "MAE", "SoftMAE", "cov", "cov adj", "size", "size adj"
    );
    for row in &table.rows {
        let r = &row.report;
        println!(
            "{:<8} {:<6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            row.method,
            row.mode.label(),
            f(r.mae_hu),
            f(r.soft_mae_hu),
            f(r.marginal_coverage[0]),
            f(r.marginal_coverage[1]),
            f(r.mean_interval_size[0]),
            f(r.mean_interval_size[1]),
        );
    }
    for t in &table.timings {
        println!("{:<24} {:>8.2?}", t.stage, t.elapsed);
    }
    Ok(())
}
