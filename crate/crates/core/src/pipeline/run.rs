use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::iou;
use super::model::{Model, Prepared};
use super::train::train_per_image;
use crate::backends::{ArrayFile, DType, ProbabilityMap};
use crate::contrast::PointPrompt;
use crate::dataset::{write_binary_mask, write_overlay, BinaryMask, Sample};
use crate::error::{Error, Result};
use crate::selection::Strategy;

/// Contents of `prompts.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub strategy: Strategy,
    pub initial: PointPrompt,
    pub threshold: Option<f64>,
    pub otsu_fallback: bool,
    pub occlusion: Vec<PointPrompt>,
    pub non_occlusion: Vec<PointPrompt>,
}

/// Everything `run` produces for one sample.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub id: String,
    pub mask: BinaryMask,
    pub probability: ProbabilityMap,
    pub prompts: PromptRecord,
    pub no_occlusion: bool,
    /// IoU against the ground truth, when the sample carries one.
    pub iou: Option<f64>,
}

/// Per-sample line of `results.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub occlusion_prompts: usize,
    pub face_prompts: usize,
    pub mask_pixels: usize,
    pub no_occlusion: bool,
    pub iou: Option<f64>,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            id: self.id.clone(),
            occlusion_prompts: self.prompts.occlusion.len(),
            face_prompts: self.prompts.non_occlusion.len(),
            mask_pixels: self.mask.count(),
            no_occlusion: self.no_occlusion,
            iou: self.iou,
        }
    }

    /// Writes `mask.png`, `prob.bin`, `prompts.json` and `overlay.png` under
    /// `out_dir/<id>/` and returns that directory.
    pub fn write(&self, image: &crate::dataset::RgbImage, out_dir: &Path) -> Result<PathBuf> {
        let dir = out_dir.join(&self.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_binary_mask(&dir.join("mask.png"), &self.mask)?;
        ArrayFile::from(&self.probability).write(&dir.join("prob.bin"), DType::F32)?;
        let json = serde_json::to_string_pretty(&self.prompts).expect("prompt record serializes");
        let path = dir.join("prompts.json");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        write_overlay(image, &self.mask, &dir.join("overlay.png"))?;
        Ok(dir)
    }
}

fn prompt_record(model: &Model, prep: &Prepared) -> PromptRecord {
    PromptRecord {
        id: prep.id.clone(),
        strategy: model.config().ps.strategy,
        initial: prep.initial,
        threshold: prep.threshold,
        otsu_fallback: prep.otsu_fallback,
        occlusion: prep.prompts.occlusion.clone(),
        non_occlusion: prep.prompts.non_occlusion.clone(),
    }
}

/// Inference on one sample with the model as given.
pub fn run_sample(model: &Model, sample: &Sample) -> Result<RunResult> {
    let prep = model.prepare(sample)?;
    finish(model, sample, &prep)
}

/// Trains a fresh copy of `model` on this sample alone, then predicts.
/// Samples without an occlusion or face prompt are predicted untrained.
pub fn run_sample_per_image(model: &Model, sample: &Sample) -> Result<RunResult> {
    let prep = model.prepare(sample)?;
    let mut fitted = model.clone();
    if prep.has_occlusion() && !prep.prompts.non_occlusion.is_empty() {
        train_per_image(&mut fitted, &prep)?;
    }
    finish(&fitted, sample, &prep)
}

fn finish(model: &Model, sample: &Sample, prep: &Prepared) -> Result<RunResult> {
    let pred = model.predict(prep)?;
    let iou = sample.gt_occlusion.as_ref().map(|gt| iou(&pred.mask, gt)).transpose()?;
    Ok(RunResult {
        id: sample.id.clone(),
        prompts: prompt_record(model, prep),
        mask: pred.mask,
        probability: pred.probability,
        no_occlusion: pred.no_occlusion,
        iou,
    })
}

/// Mean IoU over results that carry one.
pub fn mean_iou(results: &[RunResult]) -> Option<f64> {
    let v: Vec<f64> = results.iter().filter_map(|r| r.iou).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_sample, SynthConfig};
    use crate::pipeline::PipelineConfig;

    fn sample(index: u64) -> Sample {
        let s = synth_sample(&SynthConfig::default(), index).unwrap();
        Sample {
            id: s.id,
            image: s.image,
            parsing: s.parsing,
            reference: Some(s.reference),
            gt_occlusion: Some(s.gt_occlusion),
        }
    }

    #[test]
    fn writes_the_four_artifacts() {
        let model = Model::new(&PipelineConfig::default()).unwrap();
        let s = sample(0);
        let r = run_sample(&model, &s).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = r.write(&s.image, tmp.path()).unwrap();
        for f in ["mask.png", "prob.bin", "prompts.json", "overlay.png"] {
            assert!(dir.join(f).is_file(), "{f} missing");
        }
        let back: PromptRecord =
            serde_json::from_str(&fs::read_to_string(dir.join("prompts.json")).unwrap()).unwrap();
        assert_eq!(back, r.prompts);
        let map = ArrayFile::read(&dir.join("prob.bin")).unwrap().into_probability_map().unwrap();
        assert_eq!(map.values().len(), r.probability.values().len());
    }

    #[test]
    fn identical_reference_gives_empty_mask() {
        let model = Model::new(&PipelineConfig::default()).unwrap();
        let mut s = sample(1);
        s.reference = Some(s.image.clone());
        let r = run_sample(&model, &s).unwrap();
        assert!(r.no_occlusion);
        assert!(r.mask.is_empty());
        assert!(r.prompts.occlusion.is_empty());
    }

    #[test]
    fn per_image_run_is_deterministic() {
        let model = Model::new(&PipelineConfig::default()).unwrap();
        let s = sample(2);
        let a = run_sample_per_image(&model, &s).unwrap();
        let b = run_sample_per_image(&model, &s).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.probability.values(), b.probability.values());
    }
}
