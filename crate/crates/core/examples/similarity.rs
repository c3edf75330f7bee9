//! Token similarity between an image and its reference, and the initial prompt
//! it yields.

use contrast_occlusion::contrast::{cosine_similarity_map, select_initial_prompt};
use contrast_occlusion::dataset::{synth_sample, SynthConfig};
use contrast_occlusion::pipeline::{Model, PipelineConfig};

fn main() -> contrast_occlusion::Result<()> {
    let sample = synth_sample(&SynthConfig::default(), 3)?.into();
    let model = Model::new(&PipelineConfig::default())?;
    let (z, z_ref) = model.encode_pair(&sample)?;
    let sim = cosine_similarity_map(&z, &z_ref)?;

    // '#' marks cells where the image departs from the reference
    for r in 0..sim.grid_h() {
        let row: String = (0..sim.grid_w())
            .map(|c| match sim.get(r, c) {
                v if v < 0.0 => '#',
                v if v < 0.9 => '+',
                _ => '.',
            })
            .collect();
        println!("{row}");
    }
    let p = select_initial_prompt(&sim);
    println!("initial prompt at cell {:?}, pixel {:?}, label {:?}", p.cell, p.pixel, p.label);
    Ok(())
}
