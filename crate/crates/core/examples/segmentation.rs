//! Extract body and bone priors from a planning CT and score them against
//! the phantom's analytic masks.

use ctconform::metrics::dice;
use ctconform::phantom::{generate_phantom, PhantomSpec};
use ctconform::segmentation::{
    build_prior, connected_components, extract_body_mask, BodySegConfig, BoneSegConfig, Connectivity,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let body_cfg = BodySegConfig::default();
    let bone_cfg = BoneSegConfig::default();

    for seed in 0..5 {
        let p = generate_phantom(&PhantomSpec::default(), seed)?;
        let prior = build_prior(&p.ct, &body_cfg, &bone_cfg, None)?;
        let bones = connected_components(&prior.bone, Connectivity::Eight).count();
        println!(
            "seed {seed}: dice body {:.4}  bone {:.4}  bone components {bones}  bone within body {}",
            dice(&prior.body, &p.body_truth)?,
            dice(&prior.bone, &p.bone_truth)?,
            prior.bone.is_subset_of(&prior.body),
        );
    }

    // A stricter threshold trims the low-density fat layer from the body.
    let p = generate_phantom(&PhantomSpec::default(), 0)?;
    let strict = BodySegConfig {
        threshold_hu: -50.0,
        ..body_cfg
    };
    let body = extract_body_mask(&p.ct, &strict, None)?;
    println!("threshold -50 HU: body dice {:.4}", dice(&body, &p.body_truth)?);
    Ok(())
}
