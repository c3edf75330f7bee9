//! Feature enhancement: both token grids pass through the same two-way blocks
//! conditioned on the initial prompt.

use contrast_occlusion::contrast::{cosine_similarity_map, enhance_pair, select_initial_prompt};
use contrast_occlusion::dataset::{synth_sample, Sample, SynthConfig};
use contrast_occlusion::pipeline::{Model, PipelineConfig};

fn main() -> contrast_occlusion::Result<()> {
    let synth = synth_sample(&SynthConfig::default(), 5)?;
    let gt = synth.gt_occlusion.clone();
    let sample: Sample = synth.into();
    let model = Model::new(&PipelineConfig::default())?;

    let (z, z_ref) = model.encode_pair(&sample)?;
    let before = cosine_similarity_map(&z, &z_ref)?;
    let p0 = select_initial_prompt(&before);
    let emb = model.prompt_encoder().encode(&p0, z.extent());
    let (z_e, z_re) = enhance_pair(&z, &z_ref, emb.view(), model.adjustment())?;
    let after = cosine_similarity_map(&z_e, &z_re)?;

    let s = z.stride();
    let (mut occ, mut clean) = ((0.0, 0.0, 0), (0.0, 0.0, 0));
    for i in 0..z.cells() {
        let (r, c) = z.cell(i);
        let bucket = if gt.get(r * s + s / 2, c * s + s / 2) { &mut occ } else { &mut clean };
        bucket.0 += before.values()[i];
        bucket.1 += after.values()[i];
        bucket.2 += 1;
    }
    for (name, (b, a, n)) in [("occluded", occ), ("clean", clean)] {
        let n = n.max(1) as f64;
        println!("{name:<9} cells: mean similarity {:.3} -> {:.3}", b / n, a / n);
    }
    Ok(())
}
