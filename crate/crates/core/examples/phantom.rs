//! Generate a procedural CT slice, degrade it to a CBCT and write both as PGM.
//!
//! ```sh
//! cargo run --example phantom -- /tmp/phantom
//! ```

use std::path::PathBuf;

use ctconform::io::export_pgm;
use ctconform::phantom::{degrade_to_cbct, generate_phantom, DegradationSpec, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ctconform-phantom"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let spec = PhantomSpec::default();
    let phantom = generate_phantom(&spec, 7)?;
    let cbct = degrade_to_cbct(&phantom.ct, &DegradationSpec::default(), 8)?;

    let (lo, hi) = phantom
        .ct
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "ct {}x{}  HU range [{lo:.0}, {hi:.0}]",
        phantom.ct.height(),
        phantom.ct.width()
    );
    println!(
        "body {} px, bone {} px",
        phantom.body_truth.count(),
        phantom.bone_truth.count()
    );

    let diff: f64 = phantom
        .ct
        .values()
        .iter()
        .zip(cbct.values())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / cbct.values().len() as f64;
    println!("mean |CT - CBCT| = {diff:.1} HU");

    export_pgm(&phantom.ct, &out.join("ct.pgm"), (-1000.0, 1000.0))?;
    export_pgm(&cbct, &out.join("cbct.pgm"), (-1000.0, 1000.0))?;
    println!("wrote {}", out.display());
    Ok(())
}
