//! Scores a reference image: SSIM outside the occlusion plus landmark
//! confidence inside it.

use contrast_occlusion::backends::{ConstantLandmark, QualityInputs};
use contrast_occlusion::dataset::{synth_sample, SynthConfig};
use contrast_occlusion::pipeline::{assess_reference, quality_score};

fn main() -> contrast_occlusion::Result<()> {
    let s = synth_sample(
        &SynthConfig {
            reference_relight: 0.15,
            ..SynthConfig::default()
        },
        2,
    )?;
    // landmark confidences come from an external detector; constants stand in here
    let report = assess_reference(
        &s.reference,
        &s.image,
        &s.gt_occlusion,
        &ConstantLandmark(0.81),
        Some(&ConstantLandmark(0.59)),
    )?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    println!("confidence gain {:+.2}", report.confidence_gain().unwrap());

    let score = quality_score(QualityInputs::new(0.81, 0.87)?);
    println!("score for ssim 0.87 and confidence 0.81: {score:.2}");
    Ok(())
}
