//! Prompt screening and decoding, with and without the screening layer.

use contrast_occlusion::dataset::{synth_sample, Sample, SynthConfig};
use contrast_occlusion::pipeline::{iou, train_per_image, Model, PipelineConfig};

fn main() -> contrast_occlusion::Result<()> {
    let sample: Sample = synth_sample(&SynthConfig::default(), 11)?.into();
    let gt = sample.gt_occlusion.clone().expect("synthetic samples carry ground truth");
    // the screening layer starts as the identity, so it only matters once trained
    for (sa, fit) in [(false, false), (true, false), (true, true)] {
        let mut cfg = PipelineConfig::default();
        cfg.ps.sa.enabled = sa;
        let mut model = Model::new(&cfg)?;
        let prep = model.prepare(&sample)?;
        if fit {
            train_per_image(&mut model, &prep)?;
        }
        let pred = model.predict(&prep)?;
        let p = pred.probability.values();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        println!(
            "screening {:<8}  prompts {:>3}  mean probability {mean:.3}  mask pixels {:>4}  iou {:.3}",
            if fit { "trained" } else if sa { "on" } else { "off" },
            prep.prompts.len(),
            pred.mask.count(),
            iou(&pred.mask, &gt)?
        );
    }
    Ok(())
}
