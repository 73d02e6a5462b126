//! Random affine perturbation of a segmentation prior at each level, and its
//! effect on SEG and C+SEG translations.

use ctconform::config::RunConfig;
use ctconform::harness::{fit_translator, generate_slices, translation_metrics};
use ctconform::metrics::dice;
use ctconform::phantom::{perturb_prior, PerturbationLevel};
use ctconform::translator::TranslatorMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 9,
        ..Default::default()
    };
    let fit = generate_slices(&cfg, "F", 0, 4, 6, cfg.seed)?;
    let translator = fit_translator(&cfg, &fit)?;
    let slice = &generate_slices(&cfg, "T", 0, 1, 1, cfg.seed)?[0];

    println!("level  max (rot deg, shift, scale)  dice body  dice bone  MAE SEG  MAE C+SEG");
    for level in PerturbationLevel::all() {
        let prior = perturb_prior(&slice.prior, level, 100 + level.get() as u64);
        let mae = |mode| -> Result<f64, Box<dyn std::error::Error>> {
            let sct = translator.translate(Some(&slice.cbct), Some(&prior), mode)?;
            Ok(translation_metrics(&cfg, &sct, slice)?.mae_hu.unwrap_or(f64::NAN))
        };
        let (r, t, s) = level.magnitudes();
        println!(
            "{:>5}  ({r:>4.1}, {t:>4.2}, {s:>5.2})             {:>9.3}  {:>9.3}  {:>7.1}  {:>9.1}",
            level.get(),
            dice(&prior.body, &slice.prior.body)?,
            dice(&prior.bone, &slice.prior.bone)?,
            mae(TranslatorMode::Seg)?,
            mae(TranslatorMode::CSeg)?,
        );
    }
    Ok(())
}
