//! Trains on one synthetic split and evaluates on another.
//!
//! cargo run --release --example standard_training

use contrast_occlusion::dataset::Sample;
use contrast_occlusion::pipeline::{iou, train_standard, Model, PipelineConfig, SuiteSpec};

fn mean_iou(model: &Model, samples: &[Sample]) -> contrast_occlusion::Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = model.predict(&model.prepare(s)?)?;
        total += iou(&pred.mask, s.gt_occlusion.as_ref().unwrap())?;
    }
    Ok(total / samples.len() as f64)
}

fn main() -> contrast_occlusion::Result<()> {
    let train = SuiteSpec {
        count: 100,
        start: 100,
        ..SuiteSpec::default()
    }
    .samples()?;
    let test = SuiteSpec::default().samples()?;

    let mut model = Model::new(&PipelineConfig::default())?;
    println!("held-out iou before training {:.4}", mean_iou(&model, &test)?);
    let preps = train.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>, _>>()?;
    let report = train_standard(&mut model, &preps)?;
    let losses = report.losses();
    println!(
        "{} steps, loss {:.4} -> {:.4}",
        losses.len(),
        losses.first().unwrap_or(&f64::NAN),
        losses.last().unwrap_or(&f64::NAN)
    );
    println!("held-out iou after training  {:.4}", mean_iou(&model, &test)?);

    let ck = serde_json::to_string(&model.checkpoint()).expect("checkpoint serializes");
    println!("checkpoint: {} bytes of json", ck.len());
    Ok(())
}
