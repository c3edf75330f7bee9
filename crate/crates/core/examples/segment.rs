//! Segments a few samples and writes mask, probability map, prompts and
//! overlay for each.
//!
//! cargo run --release --example segment -- /tmp/occ_out

use std::path::PathBuf;

use contrast_occlusion::dataset::{synth_sample, Sample, SynthConfig};
use contrast_occlusion::pipeline::{mean_iou, run_sample_per_image, Model, PipelineConfig};

fn main() -> contrast_occlusion::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "segment_out".into()));
    let model = Model::new(&PipelineConfig::default())?;
    let mut results = Vec::new();
    for i in 0..4 {
        let s: Sample = synth_sample(&SynthConfig::default(), i)?.into();
        let r = run_sample_per_image(&model, &s)?;
        let dir = r.write(&s.image, &out)?;
        let sum = r.summary();
        println!("{}  iou {:.3}  mask pixels {:>4}  -> {}", sum.id, sum.iou.unwrap(), sum.mask_pixels, dir.display());
        results.push(r);
    }
    println!("mean iou {:.4}", mean_iou(&results).unwrap());
    Ok(())
}
