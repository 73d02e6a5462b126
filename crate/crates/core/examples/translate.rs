//! Fit the translator stubs on a few phantom patients and compare the three
//! input modes on held-out slices.

use ctconform::config::RunConfig;
use ctconform::harness::{fit_translator, generate_slices, translation_metrics};
use ctconform::metrics::MetricsReport;
use ctconform::translator::TranslatorMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 3,
        ..Default::default()
    };
    let fit = generate_slices(&cfg, "F", 0, 4, 6, cfg.seed)?;
    let translator = fit_translator(&cfg, &fit)?;
    let test = generate_slices(&cfg, "T", 0, 8, 2, cfg.seed)?;

    println!(
        "{:<6} {:>8} {:>8} {:>9} {:>9}",
        "mode", "MAE", "SoftMAE", "Dice body", "Dice bone"
    );
    for mode in [TranslatorMode::Cbct, TranslatorMode::Seg, TranslatorMode::CSeg] {
        let mut rows = Vec::new();
        for s in &test {
            let sct = translator.translate(Some(&s.cbct), Some(&s.prior), mode)?;
            rows.push(translation_metrics(&cfg, &sct, s)?);
        }
        let r = MetricsReport::aggregate(mode.label(), &rows);
        let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
        println!(
            "{:<6} {:>8} {:>8} {:>9} {:>9}",
            r.label,
            f(r.mae_hu),
            f(r.soft_mae_hu),
            f(r.dice_body),
            f(r.dice_bone)
        );
    }

    // SEG needs no CBCT at all.
    let s = &test[0];
    let seg = translator.translate(None, Some(&s.prior), TranslatorMode::Seg)?;
    println!("SEG from the prior alone: {}x{} HU grid", seg.height(), seg.width());
    Ok(())
}
