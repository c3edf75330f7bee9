//! Generates a small synthetic dataset on disk and reads it back.
//!
//! cargo run --example synth_dataset -- /tmp/occ_data 8

use std::path::PathBuf;

use contrast_occlusion::dataset::{load_sample, read_manifest, write_synth_dataset, Split, SynthConfig};

fn main() -> contrast_occlusion::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_data".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);

    let cfg = SynthConfig {
        reference_relight: 0.15,
        reference_shift: 2,
        ..SynthConfig::default()
    };
    write_synth_dataset(&cfg, count, Split::Test, &out)?;

    for rec in read_manifest(&out.join("manifest.jsonl"))? {
        let s = load_sample(&rec)?;
        let gt = s.gt_occlusion.as_ref().map_or(0, |m| m.count());
        println!("{:<18} {:?}  occluded pixels {gt}", s.id, s.image.dims());
    }
    println!("wrote {count} samples under {}", out.display());
    Ok(())
}
