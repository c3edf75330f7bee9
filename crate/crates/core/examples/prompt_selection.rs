//! Compares the three prompt-selection strategies on one sample.

use contrast_occlusion::dataset::{synth_sample, SynthConfig};
use contrast_occlusion::pipeline::{Model, PipelineConfig};
use contrast_occlusion::selection::Strategy;

fn main() -> contrast_occlusion::Result<()> {
    let sample = synth_sample(&SynthConfig::default(), 7)?.into();
    for strategy in [Strategy::Greedy, Strategy::Threshold, Strategy::Otsu] {
        let mut cfg = PipelineConfig::default();
        cfg.ps.strategy = strategy;
        let prep = Model::new(&cfg)?.prepare(&sample)?;
        let cut = prep.threshold.map_or("-".to_string(), |t| format!("{t:.3}"));
        println!(
            "{:<9}  occlusion prompts {:>3}  face prompts {:>3}  threshold {cut}{}",
            format!("{strategy:?}"),
            prep.prompts.occlusion.len(),
            prep.prompts.non_occlusion.len(),
            if prep.otsu_fallback { " (fallback)" } else { "" }
        );
    }
    Ok(())
}
