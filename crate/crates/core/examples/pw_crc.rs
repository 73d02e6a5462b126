//! Pixel-wise conformal risk control: widen ensemble bounds by a single
//! `lambda` so the expected fraction of missed pixels stays below `alpha`.

use ctconform::config::RunConfig;
use ctconform::conformal::{calibrate_pw_crc, miscoverage_risk, predict_crc, ConformalError, CrcItem};
use ctconform::harness::{eval_mask, fit_translator, generate_slices, translate_with_bounds};
use ctconform::translator::TranslatorMode;
use ctconform::{BinaryMask, ImageGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 5,
        ..Default::default()
    };
    let fit = generate_slices(&cfg, "F", 0, 4, 6, cfg.seed)?;
    let translator = fit_translator(&cfg, &fit)?;
    let cal = generate_slices(&cfg, "C", 0, 10, 6, cfg.seed)?;
    let test = generate_slices(&cfg, "T", 0, 4, 6, cfg.seed)?;
    let cal_t = translate_with_bounds(&cfg, &translator, &cal, TranslatorMode::CSeg)?;
    let test_t = translate_with_bounds(&cfg, &translator, &test, TranslatorMode::CSeg)?;

    let cts: Vec<ImageGrid> = cal.iter().map(|s| s.ct.to_normalized(&cfg.normalization)).collect();
    let masks: Vec<BinaryMask> = cal.iter().map(|s| eval_mask(&cfg, s)).collect();
    let items: Vec<CrcItem> = cal_t
        .iter()
        .zip(cts.iter().zip(&masks))
        .map(|(t, (ct, mask))| CrcItem {
            bounds: &t.bounds,
            ct,
            mask,
        })
        .collect();

    let raw: f64 = test
        .iter()
        .zip(&test_t)
        .map(|(s, t)| {
            miscoverage_risk(
                &t.bounds,
                &s.ct.to_normalized(&cfg.normalization),
                &eval_mask(&cfg, s),
                0.0,
            )
        })
        .sum::<Result<f64, _>>()?
        / test.len() as f64;
    println!("ensemble bounds alone miss {raw:.3} of body pixels");

    for adjusted in [false, true] {
        let calib = calibrate_pw_crc(&items, 10, &cfg.crc_options(adjusted))?;
        let risk: f64 = test
            .iter()
            .zip(&test_t)
            .map(|(s, t)| {
                let iv = predict_crc(&t.bounds, &calib)?;
                Ok::<_, Box<dyn std::error::Error>>(miscoverage_risk(
                    &iv,
                    &s.ct.to_normalized(&cfg.normalization),
                    &eval_mask(&cfg, s),
                    0.0,
                )?)
            })
            .sum::<Result<f64, _>>()?
            / test.len() as f64;
        println!(
            "PW-CRC{}: lambda {:.4} ({:.1} HU), test risk {risk:.3} (alpha {})",
            if adjusted { " adjusted" } else { "         " },
            calib.lambda_hat,
            calib.lambda_hat as f64 * cfg.normalization.half_range(),
            cfg.alpha
        );
    }

    // Too few calibration slices for the requested alpha is a typed error.
    let strict = RunConfig {
        alpha: 0.01,
        ..cfg.clone()
    };
    match calibrate_pw_crc(&items[..6], 2, &strict.crc_options(false)) {
        Err(ConformalError::Infeasible(f)) => println!("alpha 0.01 with 6 slices: {f}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
