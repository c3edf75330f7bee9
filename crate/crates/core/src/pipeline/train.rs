use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainMode;
use super::model::{Model, Prepared};
use crate::backends::sigmoid;
use crate::error::{Error, Result};
use crate::objectives::{grad_total_terms, loss_total_terms};
use crate::seeding::rng;
use crate::selection::ScreenGrad;

const STREAM_SHUFFLE: u64 = 11;

/// Loss and gradients of one sample.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub loss: f64,
    pub screen: Option<ScreenGrad>,
    /// Gradient of the positive and negative label embeddings.
    pub labels: Array2<f64>,
}

/// Why a sample contributed no gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoOcclusionPrompt,
    NoFacePrompt,
}

/// Forward to the probability map, loss at the prompt cells, and backward
/// through the toy decoder and screening layer.
pub fn sample_gradient(model: &Model, prep: &Prepared) -> Result<std::result::Result<SampleGrad, SkipReason>> {
    if prep.prompts.occlusion.is_empty() {
        return Ok(Err(SkipReason::NoOcclusionPrompt));
    }
    if prep.prompts.non_occlusion.is_empty() {
        return Ok(Err(SkipReason::NoFacePrompt));
    }
    let decoder = model
        .toy_decoder()
        .ok_or_else(|| Error::Config("training needs the toy decoder".into()))?;
    let keys = prep.keys.as_ref().expect("toy decoder keys");
    let cfg = model.config();
    let w = cfg.loss.weights();
    let labels = prep.prompts.labels();
    let p_e = model.embed(prep);
    let (p, cache) = if model.screening_enabled() {
        let (p, c) = model.screening().forward(p_e.view())?;
        (p, Some(c))
    } else {
        (p_e, None)
    };
    let logits = decoder.logits(keys, p.view(), &labels)?;

    let cell = |pp: &crate::contrast::PointPrompt| pp.cell.0 * prep.grid_w + pp.cell.1;
    let occ: Vec<usize> = prep.prompts.occlusion.iter().map(cell).collect();
    let face: Vec<usize> = prep.prompts.non_occlusion.iter().map(cell).collect();
    let raw = |cells: &[usize]| cells.iter().map(|&c| sigmoid(logits[c])).collect::<Vec<f64>>();
    let clamp = |q: &[f64]| q.iter().map(|v| v.clamp(w.eps, 1.0 - w.eps)).collect::<Vec<f64>>();
    let (raw_occ, raw_face) = (raw(&occ), raw(&face));
    let (q_occ, q_face) = (clamp(&raw_occ), clamp(&raw_face));
    let loss = loss_total_terms(&q_occ, &q_face, &w, &cfg.loss.terms)?;
    let (g_occ, g_face) = grad_total_terms(&q_occ, &q_face, &w, &cfg.loss.terms);

    // dq/dlogit = q (1 - q), zero where the clamp is active
    let mut d_logits = Array1::zeros(logits.len());
    for (cells, raw, g) in [(&occ, &raw_occ, &g_occ), (&face, &raw_face, &g_face)] {
        for ((&c, &q), &dq) in cells.iter().zip(raw.iter()).zip(g.iter()) {
            if q > w.eps && q < 1.0 - w.eps {
                d_logits[c] += dq * q * (1.0 - q);
            }
        }
    }
    let d_p = decoder.backward(keys, &labels, &d_logits);
    let (screen, d_pe) = match &cache {
        Some(c) => {
            let (g, d) = model.screening().backward(c, d_p.view());
            (Some(g), d)
        }
        None => (None, d_p),
    };
    let mut label_grad = Array2::zeros((2, d_pe.ncols()));
    for (row, l) in d_pe.outer_iter().zip(&labels) {
        let slot = usize::from(*l == crate::contrast::Label::Negative);
        let mut g = label_grad.row_mut(slot);
        g += &row;
    }
    Ok(Ok(SampleGrad {
        loss,
        screen,
        labels: label_grad,
    }))
}

/// Decoupled weight-decay Adam over a fixed list of flat parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            weight_decay,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every block not marked `frozen`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>], frozen: &[bool], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (b, p) in params.into_iter().enumerate() {
            if frozen[b] {
                continue;
            }
            let (m, v, g) = (&mut self.m[b], &mut self.v[b], &grads[b]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p[i] -= lr * (update + self.weight_decay * p[i]);
            }
        }
    }
}

/// Cosine decay from `base` at step 0 towards zero at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    0.5 * base * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    pub lr: f64,
    /// Mean loss over the contributing samples, before the update.
    pub loss: Option<f64>,
    pub samples: Vec<String>,
    pub skipped: Vec<(String, SkipReason)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub log: Vec<StepRecord>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.loss).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.log {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

struct Trainer {
    opt: AdamW,
    /// Per parameter block: excluded from updates.
    frozen: Vec<bool>,
}

impl Trainer {
    fn new(model: &mut Model) -> Result<Self> {
        let cfg = model.config().training.clone();
        let train_sa = model.screening_enabled();
        if !train_sa && !cfg.train_label_embeddings {
            return Err(Error::Config(
                "nothing to train: ps.sa.enabled is false and training.train_label_embeddings is false".into(),
            ));
        }
        let sizes: Vec<usize> = model.trainable_params_mut().iter().map(|p| p.len()).collect();
        let mut frozen = vec![!train_sa; sizes.len()];
        *frozen.last_mut().expect("label block") = !cfg.train_label_embeddings;
        Ok(Self {
            opt: AdamW::new(&sizes, cfg.beta1, cfg.beta2, cfg.weight_decay),
            frozen,
        })
    }

    /// Averages the gradients of `preps` and takes one step.
    fn step(&mut self, model: &mut Model, preps: &[&Prepared], lr: f64) -> Result<(Option<f64>, Vec<(String, SkipReason)>)> {
        let mut acc: Option<Vec<Vec<f64>>> = None;
        let (mut loss, mut used) = (0.0, 0usize);
        let mut skipped = Vec::new();
        for prep in preps {
            let g = match sample_gradient(model, prep)? {
                Ok(g) => g,
                Err(reason) => {
                    skipped.push((prep.id.clone(), reason));
                    continue;
                }
            };
            loss += g.loss;
            used += 1;
            let flat = g.flatten(model);
            match acc.as_mut() {
                None => acc = Some(flat),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(flat) {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let Some(mut grads) = acc else {
            return Ok((None, skipped));
        };
        for x in grads.iter_mut().flatten() {
            *x /= used as f64;
        }
        self.opt.step(model.trainable_params_mut(), &grads, &self.frozen, lr);
        Ok((Some(loss / used as f64), skipped))
    }
}

impl SampleGrad {
    /// Gradient blocks in the order of [`Model::trainable_params_mut`].
    fn flatten(&self, model: &mut Model) -> Vec<Vec<f64>> {
        let mut flat: Vec<Vec<f64>> = match &self.screen {
            Some(s) => s.flat().into_iter().map(|b| b.to_vec()).collect(),
            None => model.screening_mut().params_mut().iter().map(|p| vec![0.0; p.len()]).collect(),
        };
        flat.push(self.labels.iter().copied().collect());
        flat
    }
}

/// Standard training: shuffled mini-batches over all samples for the
/// configured number of epochs, one optimizer step per batch.
pub fn train_standard(model: &mut Model, preps: &[Prepared]) -> Result<TrainReport> {
    if preps.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let cfg = model.config().training.clone();
    let mut trainer = Trainer::new(model)?;
    let batches_per_epoch = preps.len().div_ceil(cfg.batch);
    let total = cfg.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..preps.len()).collect();
    let mut r = rng(cfg.seed, STREAM_SHUFFLE);
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &preps[i]).collect();
            let lr = cosine_lr(cfg.lr, step, total);
            let (loss, skipped) = trainer.step(model, &batch, lr)?;
            report.log.push(StepRecord {
                step,
                epoch: Some(epoch),
                lr,
                loss,
                samples: batch.iter().map(|p| p.id.clone()).collect(),
                skipped,
            });
            step += 1;
        }
    }
    Ok(report)
}

/// Per-image training: `training.steps` updates on a single sample.
pub fn train_per_image(model: &mut Model, prep: &Prepared) -> Result<TrainReport> {
    let cfg = model.config().training.clone();
    let mut trainer = Trainer::new(model)?;
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let lr = cosine_lr(cfg.lr, step, cfg.steps);
        let (loss, skipped) = trainer.step(model, &[prep], lr)?;
        let stop = loss.is_none();
        report.log.push(StepRecord {
            step,
            epoch: None,
            lr,
            loss,
            samples: vec![prep.id.clone()],
            skipped,
        });
        if stop {
            break;
        }
    }
    Ok(report)
}

/// Dispatches on `training.mode`; per-image mode takes exactly one sample.
pub fn train(model: &mut Model, preps: &[Prepared]) -> Result<TrainReport> {
    match model.config().training.mode {
        TrainMode::Standard => train_standard(model, preps),
        TrainMode::PerImage => match preps {
            [one] => train_per_image(model, one),
            _ => Err(Error::Config(format!(
                "per_image training takes exactly one sample, got {}",
                preps.len()
            ))),
        },
    }
}
