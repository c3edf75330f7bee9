//! Swaps the built-in encoder for precomputed feature files.
//!
//! Features from any model can be exported in the array format as
//! `<id>.feat` and `<id>.ref.feat`; here the toy encoder writes them so the
//! two runs can be compared.

use contrast_occlusion::backends::{ArrayFile, BackendKind, DType, ExternalEncoder, ImageRole, ToyEncoder};
use contrast_occlusion::dataset::{synth_sample, Sample, SynthConfig};
use contrast_occlusion::pipeline::{run_sample, Model, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("occseg_features");
    std::fs::create_dir_all(&dir)?;

    let base = PipelineConfig::default();
    let toy = ToyEncoder::new(base.backend.patch_size, base.fe.dim, base.fe.seed)?;
    let samples: Vec<Sample> = (0..3)
        .map(|i| synth_sample(&SynthConfig::default(), i).map(Sample::from))
        .collect::<contrast_occlusion::Result<_>>()?;
    for s in &samples {
        let reference = s.reference.as_ref().unwrap();
        for (img, role) in [(&s.image, ImageRole::Input), (reference, ImageRole::Reference)] {
            let path = ExternalEncoder::feature_path(&dir, &s.id, role);
            ArrayFile::from(&toy.encode(img)?).write(&path, DType::F64)?;
        }
    }

    let mut cfg = base.clone();
    cfg.backend.encoder = BackendKind::External;
    cfg.backend.feature_dir = Some(dir.clone());
    let (built_in, external) = (Model::new(&base)?, Model::new(&cfg)?);
    for s in &samples {
        let a = run_sample(&built_in, s)?;
        let b = run_sample(&external, s)?;
        println!("{}  iou built-in {:.4}  external {:.4}", s.id, a.iou.unwrap(), b.iou.unwrap());
    }
    println!("features in {}", dir.display());
    Ok(())
}
