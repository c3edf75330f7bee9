//! Runs the default ablation table over the fixed synthetic suite.
//!
//! cargo run --release --example ablation

use contrast_occlusion::pipeline::{run_ablation, AblationSpec, PipelineConfig};

fn main() -> contrast_occlusion::Result<()> {
    let spec = AblationSpec::default();
    let table = run_ablation(&PipelineConfig::default(), &spec)?;
    print!("{}", table.to_text());
    Ok(())
}
