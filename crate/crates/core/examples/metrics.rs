//! The evaluation metrics on a hand-built 4x4 example.

use ctconform::conformal::IntervalField;
use ctconform::metrics::{
    dice, marginal_coverage, masked_mae, mean_interval_size, soft_mae, soft_mask, stratified_coverage_error,
    uncertainty_map, StratificationBins,
};
use ctconform::segmentation::SegmentationPrior;
use ctconform::{BinaryMask, ImageGrid, NormalizationSpec, Units};

fn mask(rows: [&str; 4]) -> BinaryMask {
    let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
    BinaryMask::new(4, 4, bits).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = NormalizationSpec::default();
    #[rustfmt::skip]
    let ct = ImageGrid::new(4, 4, vec![
        -1000.0, -1000.0, -1000.0, -1000.0,
        -1000.0,    40.0,   700.0, -1000.0,
        -1000.0,    20.0,    60.0, -1000.0,
        -1000.0, -1000.0, -1000.0, -1000.0,
    ], Units::Hu)?;
    let sct = ct.map(Units::Hu, |v| if v > -1000.0 { v + 30.0 } else { v })?;

    let body = mask(["....", ".##.", ".##.", "...."]);
    let body_pred = mask(["....", ".###", ".##.", "...."]);
    let bone = mask(["....", "..#.", "....", "...."]);
    let bone_pred = mask(["....", "....", "....", "...."]);

    println!("MAE in body       {:.1} HU", masked_mae(&sct, &ct, &body, &spec)?);
    println!(
        "soft mask pixels  {}",
        soft_mask(&body, &body_pred, &bone, &bone_pred)?.count()
    );
    let truth = SegmentationPrior::new(bone.clone(), body.clone())?;
    let pred = SegmentationPrior::new(bone_pred, body_pred.clone())?;
    println!("SoftMAE           {:.1} HU", soft_mae(&sct, &ct, &truth, &pred, &spec)?);
    println!("Dice body         {:.3}", dice(&body, &body_pred)?);

    let sct_n = sct.to_normalized(&spec);
    let ct_n = ct.to_normalized(&spec);
    let half = 40.0 / spec.half_range() as f32;
    let iv = IntervalField::new(
        sct_n.map(Units::Normalized, |v| (v - half).max(-1.0))?,
        sct_n.map(Units::Normalized, |v| (v + half).min(1.0))?,
    )?;
    let bins = StratificationBins::default();
    let strat = stratified_coverage_error(&iv, &ct_n, &body, &bins, 0.1, &spec)?;
    println!("coverage          {:.3}", marginal_coverage(&iv, &ct_n, &body)?);
    println!("interval size     {:.4} (normalized)", mean_interval_size(&iv, &body)?);
    println!("stratified error  {:.3}", strat.error);
    for (g, c) in strat.groups.iter().enumerate() {
        println!("  group {g}: {}/{}", c.covered, c.total);
    }
    let map = uncertainty_map(&iv, Units::Hu, &spec);
    println!("uncertainty map at (1, 1): {:.3}", map.get(1, 1));
    Ok(())
}
