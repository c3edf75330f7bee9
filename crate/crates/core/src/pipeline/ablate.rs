use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::model::Model;
use super::run::{run_sample, run_sample_per_image};
use crate::dataset::{synth_sample, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::objectives::LossTerms;
use crate::selection::Strategy;

/// One configuration of the ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub name: String,
    pub fe: bool,
    pub strategy: Strategy,
    pub sa: bool,
    #[serde(default)]
    pub terms: LossTerms,
}

impl AblationRow {
    pub fn new(name: &str, fe: bool, strategy: Strategy, sa: bool) -> Self {
        Self {
            name: name.into(),
            fe,
            strategy,
            sa,
            terms: LossTerms::default(),
        }
    }

    fn with_terms(mut self, recall_occ: bool, recall_face: bool, face_penalty: bool) -> Self {
        self.terms = LossTerms {
            recall_occ,
            recall_face,
            face_penalty,
        };
        self
    }

    /// `base` with this row's toggles applied.
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        cfg.fe.enabled = self.fe;
        cfg.ps.strategy = self.strategy;
        cfg.ps.sa.enabled = self.sa;
        cfg.loss.terms = self.terms;
        cfg
    }
}

/// Fixed-seed synthetic samples `start .. start + count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub count: usize,
    pub start: u64,
    pub synth: SynthConfig,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            count: 20,
            start: 0,
            synth: SynthConfig {
                seed: 42,
                reference_relight: 0.15,
                reference_shift: 2,
                ..SynthConfig::default()
            },
        }
    }
}

impl SuiteSpec {
    pub fn samples(&self) -> Result<Vec<Sample>> {
        self.synth.validate()?;
        (self.start..self.start + self.count as u64)
            .map(|i| synth_sample(&self.synth, i).map(Sample::from))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub suite: SuiteSpec,
    pub rows: Vec<AblationRow>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            suite: SuiteSpec::default(),
            rows: Self::default_rows(),
        }
    }
}

impl AblationSpec {
    /// Prompt-selection and enhancement rows followed by objective rows.
    pub fn default_rows() -> Vec<AblationRow> {
        use Strategy::*;
        vec![
            AblationRow::new("threshold", false, Threshold, false),
            AblationRow::new("otsu", false, Otsu, false),
            AblationRow::new("greedy", false, Greedy, false),
            AblationRow::new("fe+greedy", true, Greedy, false),
            AblationRow::new("greedy+sa", false, Greedy, true),
            AblationRow::new("fe+threshold+sa", true, Threshold, true),
            AblationRow::new("fe+otsu+sa", true, Otsu, true),
            AblationRow::new("fe+greedy+sa", true, Greedy, true),
            AblationRow::new("loss:recall_face", true, Greedy, true).with_terms(false, true, false),
            AblationRow::new("loss:recall_occ", true, Greedy, true).with_terms(true, false, false),
            AblationRow::new("loss:recall_face+recall_occ", true, Greedy, true).with_terms(true, true, false),
            AblationRow::new("loss:recall_face+face_penalty", true, Greedy, true).with_terms(false, true, true),
        ]
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.suite.count == 0 {
            return Err(Error::Config("suite.count must be positive".into()));
        }
        if self.rows.is_empty() {
            return Err(Error::Config("ablation has no rows".into()));
        }
        for r in &self.rows {
            let t = r.terms;
            if !(t.recall_occ || t.recall_face || t.face_penalty) {
                return Err(Error::Config(format!("row {:?} enables no loss term", r.name)));
            }
        }
        self.suite.synth.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    /// Screening trained per image before predicting.
    pub trained: bool,
    pub mean_iou: f64,
    pub per_sample: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub samples: usize,
    pub results: Vec<AblationResult>,
}

impl AblationTable {
    pub fn get(&self, name: &str) -> Option<&AblationResult> {
        self.results.iter().find(|r| r.row.name == name)
    }

    pub fn mean_iou(&self, name: &str) -> Option<f64> {
        self.get(name).map(|r| r.mean_iou)
    }

    /// Aligned plain-text table, one row per configuration.
    pub fn to_text(&self) -> String {
        let width = self.results.iter().map(|r| r.row.name.len()).max().unwrap_or(4).max(4);
        let mark = |b: bool| if b { "x" } else { "-" };
        let mut out = String::new();
        writeln!(out, "# samples: {}", self.samples).unwrap();
        writeln!(
            out,
            "{:<width$}  fe  ps         sa  L_ro  L_rf  L_fp  mean_iou",
            "name"
        )
        .unwrap();
        for r in &self.results {
            let t = r.row.terms;
            let ps = match r.row.strategy {
                Strategy::Greedy => "greedy",
                Strategy::Threshold => "threshold",
                Strategy::Otsu => "otsu",
            };
            writeln!(
                out,
                "{:<width$}  {:<2}  {:<9}  {:<2}  {:<4}  {:<4}  {:<4}  {:.4}",
                r.row.name,
                mark(r.row.fe),
                ps,
                mark(r.row.sa),
                mark(t.recall_occ),
                mark(t.recall_face),
                mark(t.face_penalty),
                r.mean_iou
            )
            .unwrap();
        }
        out
    }
}

/// Mean occlusion IoU of every row over `samples`, which must carry ground truth.
pub fn ablate(base: &PipelineConfig, rows: &[AblationRow], samples: &[Sample]) -> Result<AblationTable> {
    if samples.is_empty() {
        return Err(Error::Empty("ablation suite"));
    }
    if let Some(s) = samples.iter().find(|s| s.gt_occlusion.is_none()) {
        return Err(Error::Config(format!("sample {} has no ground-truth mask", s.id)));
    }
    let mut results = Vec::with_capacity(rows.len());
    for row in rows {
        let cfg = row.apply(base);
        let model = Model::new(&cfg)?;
        let trained = row.sa || cfg.training.train_label_embeddings;
        let per_sample = samples
            .par_iter()
            .map(|s| {
                let r = if trained {
                    run_sample_per_image(&model, s)?
                } else {
                    run_sample(&model, s)?
                };
                Ok(r.iou.expect("ground truth checked above"))
            })
            .collect::<Result<Vec<f64>>>()?;
        results.push(AblationResult {
            row: row.clone(),
            trained,
            mean_iou: per_sample.iter().sum::<f64>() / per_sample.len() as f64,
            per_sample,
        });
    }
    Ok(AblationTable {
        samples: samples.len(),
        results,
    })
}

pub fn run_ablation(base: &PipelineConfig, spec: &AblationSpec) -> Result<AblationTable> {
    spec.validate()?;
    ablate(base, &spec.rows, &spec.suite.samples()?)
}
