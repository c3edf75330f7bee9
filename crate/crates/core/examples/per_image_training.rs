//! Fits the screening layer to a single image, then predicts that image.

use contrast_occlusion::dataset::{synth_sample, Sample, SynthConfig};
use contrast_occlusion::pipeline::{iou, train_per_image, Model, PipelineConfig};

fn main() -> contrast_occlusion::Result<()> {
    let cfg = SynthConfig {
        reference_relight: 0.15,
        reference_shift: 2,
        ..SynthConfig::default()
    };
    let sample: Sample = synth_sample(&cfg, 4)?.into();
    let gt = sample.gt_occlusion.clone().unwrap();

    let mut model = Model::new(&PipelineConfig::default())?;
    let prep = model.prepare(&sample)?;
    let before = iou(&model.predict(&prep)?.mask, &gt)?;
    let report = train_per_image(&mut model, &prep)?;
    let after = iou(&model.predict(&prep)?.mask, &gt)?;

    let losses = report.losses();
    for (i, l) in losses.iter().enumerate().step_by(40) {
        println!("step {i:>3}  loss {l:.4}");
    }
    println!("iou {before:.3} -> {after:.3} after {} steps", losses.len());
    Ok(())
}
