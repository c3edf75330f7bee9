use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::{DecoderKind, PipelineConfig};
use crate::backends::{
    reference_for, DecoderKeys, Encoder, ExternalDecoder, ImageRole, ProbabilityMap, Resolution, TokenGrid,
    ToyDecoder,
};
use crate::contrast::{
    cosine_similarity_map, enhance_pair, Label, select_initial_prompt, AdjustmentParams, PointPrompt,
    PromptEncoder, SimilarityMap,
};
use crate::dataset::{BinaryMask, Sample};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::selection::{
    build_face_mask, extract_masked_tokens, greedy_match, otsu_select, threshold_select, FaceRegionMask,
    PromptSet, Screening, Selection, Strategy,
};

#[derive(Clone, Debug)]
enum DecoderBackend {
    Toy(ToyDecoder),
    External(ExternalDecoder),
}

/// Every component of the pipeline, built once from a configuration.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: PipelineConfig,
    encoder: Encoder,
    prompt_encoder: PromptEncoder,
    adjust: AdjustmentParams,
    decoder: DecoderBackend,
    screening: Screening,
}

/// Per-sample state up to the prompt set. Nothing here depends on trainable weights.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub image_dims: (usize, usize),
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    pub similarity: SimilarityMap,
    /// Similarity between the enhanced grids, when enhancement ran.
    pub enhanced_similarity: Option<SimilarityMap>,
    pub initial: PointPrompt,
    pub face: FaceRegionMask,
    pub selection: Selection,
    /// Otsu cut-off, or the fixed threshold used as fallback.
    pub threshold: Option<f64>,
    /// Otsu degenerated and the fixed threshold was used instead.
    pub otsu_fallback: bool,
    pub prompts: PromptSet,
    pub face_pixels: BinaryMask,
    /// Decoder keys of the raw image tokens; absent with an external decoder.
    pub keys: Option<DecoderKeys>,
    /// Scaled image token under each prompt, rows in [`PromptSet::all`] order.
    pub context: Array2<f64>,
}

impl Prepared {
    pub fn extent(&self) -> (usize, usize) {
        (self.grid_h * self.stride, self.grid_w * self.stride)
    }

    pub fn has_occlusion(&self) -> bool {
        !self.prompts.occlusion.is_empty()
    }
}

/// Prediction for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probability: ProbabilityMap,
    pub mask: BinaryMask,
    /// No occlusion prompt was selected; the mask is empty by rule.
    pub no_occlusion: bool,
}

/// Serializable trainable weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dim: usize,
    pub heads: usize,
    /// `[weight (row-major, in x out), bias]` for q, k, v and out.
    pub q: (Vec<f64>, Vec<f64>),
    pub k: (Vec<f64>, Vec<f64>),
    pub v: (Vec<f64>, Vec<f64>),
    pub out: (Vec<f64>, Vec<f64>),
    /// Positive then negative label embedding.
    pub label_embeddings: Vec<Vec<f64>>,
}

fn linear_to_parts(l: &Linear) -> (Vec<f64>, Vec<f64>) {
    (l.weight.iter().copied().collect(), l.bias.to_vec())
}

fn linear_from_parts(parts: &(Vec<f64>, Vec<f64>), dim: usize) -> Result<Linear> {
    if parts.0.len() != dim * dim || parts.1.len() != dim {
        return Err(Error::Config("checkpoint projection has the wrong size".into()));
    }
    Ok(Linear {
        weight: Array2::from_shape_vec((dim, dim), parts.0.clone()).expect("checked size"),
        bias: Array1::from(parts.1.clone()),
    })
}

/// Nearest-cell expansion of a token-resolution mask to `dims`.
fn prompt_context(z: &TokenGrid, prompts: &PromptSet, gain: f64) -> Array2<f64> {
    let all = prompts.all();
    let mut out = Array2::zeros((all.len(), z.dim()));
    if gain == 0.0 {
        return out;
    }
    let n_occ = prompts.occlusion.len().max(1) as f64;
    let n_face = prompts.non_occlusion.len().max(1) as f64;
    for (mut row, p) in out.outer_iter_mut().zip(&all) {
        let n = match p.label {
            Label::Positive => n_occ,
            Label::Negative => n_face,
        };
        row.scaled_add(gain / n, &z.token(p.cell.0, p.cell.1));
    }
    out
}

pub fn upsample_cells(cells: &[bool], grid_w: usize, stride: usize, dims: (usize, usize)) -> BinaryMask {
    let mut out = BinaryMask::empty(dims.0, dims.1);
    for y in 0..dims.0 {
        for x in 0..dims.1 {
            if cells[(y / stride) * grid_w + x / stride] {
                out.set(y, x, true);
            }
        }
    }
    out
}

/// Binarizes at `q > 0.5`.
pub fn binarize(map: &ProbabilityMap, dims: (usize, usize)) -> Result<BinaryMask> {
    let cells: Vec<bool> = map.values().iter().map(|&q| q > 0.5).collect();
    match map.resolution() {
        Resolution::Token { stride } => {
            if map.height() * stride < dims.0 || map.width() * stride < dims.1 {
                return Err(Error::DimensionMismatch {
                    what: "probability map extent vs image",
                    expected: dims,
                    found: (map.height() * stride, map.width() * stride),
                });
            }
            Ok(upsample_cells(&cells, map.width(), stride, dims))
        }
        Resolution::Image => {
            if (map.height(), map.width()) != dims {
                return Err(Error::DimensionMismatch {
                    what: "probability map vs image",
                    expected: dims,
                    found: (map.height(), map.width()),
                });
            }
            BinaryMask::new(dims.0, dims.1, cells)
        }
    }
}

impl Model {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::from_config(&cfg.encoder_config())?;
        let prompt_encoder = PromptEncoder::new(cfg.fe.dim, cfg.fe.seed, &cfg.fe.prompt_encoder())?;
        let adjust = AdjustmentParams::seeded(&cfg.fe, prompt_encoder.positional().clone())?;
        let decoder = match cfg.backend.decoder {
            DecoderKind::Toy => DecoderBackend::Toy(ToyDecoder::with_positional(prompt_encoder.positional().clone())),
            DecoderKind::External => DecoderBackend::External(ExternalDecoder::new(
                cfg.backend.decoder_dir.clone().ok_or_else(|| {
                    Error::Config("external decoder requires backend.decoder_dir".into())
                })?,
            )),
        };
        let screening = Screening::new(cfg.fe.dim, &cfg.ps.sa)?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            prompt_encoder,
            adjust,
            decoder,
            screening,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn screening(&self) -> &Screening {
        &self.screening
    }

    pub fn screening_mut(&mut self) -> &mut Screening {
        &mut self.screening
    }

    pub fn prompt_encoder(&self) -> &PromptEncoder {
        &self.prompt_encoder
    }

    pub fn prompt_encoder_mut(&mut self) -> &mut PromptEncoder {
        &mut self.prompt_encoder
    }

    /// Screening parameter blocks followed by the label embeddings.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.screening.params_mut();
        out.push(
            self.prompt_encoder
                .label_embeddings_mut()
                .as_slice_mut()
                .expect("contiguous label embeddings"),
        );
        out
    }

    pub fn adjustment(&self) -> &AdjustmentParams {
        &self.adjust
    }

    pub fn toy_decoder(&self) -> Option<&ToyDecoder> {
        match &self.decoder {
            DecoderBackend::Toy(d) => Some(d),
            DecoderBackend::External(_) => None,
        }
    }

    /// Screening active at inference.
    pub fn screening_enabled(&self) -> bool {
        self.cfg.ps.sa.enabled
    }

    pub fn encode_pair(&self, sample: &Sample) -> Result<(TokenGrid, TokenGrid)> {
        let reference = reference_for(sample, &self.cfg.backend.reference)?;
        let z = self.encoder.encode(&sample.image, &sample.id, ImageRole::Input)?;
        let z_ref = self.encoder.encode(&reference, &sample.id, ImageRole::Reference)?;
        if !z.same_shape(&z_ref) {
            return Err(Error::DimensionMismatch {
                what: "image vs reference tokens",
                expected: (z.grid_h(), z.grid_w()),
                found: (z_ref.grid_h(), z_ref.grid_w()),
            });
        }
        Ok((z, z_ref))
    }

    pub fn prepare(&self, sample: &Sample) -> Result<Prepared> {
        let (z, z_ref) = self.encode_pair(sample)?;
        self.prepare_tokens(sample, &z, &z_ref)
    }

    /// Everything after encoding; lets callers substitute their own token grids.
    pub fn prepare_tokens(&self, sample: &Sample, z: &TokenGrid, z_ref: &TokenGrid) -> Result<Prepared> {
        let (gh, gw, stride) = (z.grid_h(), z.grid_w(), z.stride());
        let similarity = cosine_similarity_map(z, z_ref)?;
        let initial = select_initial_prompt(&similarity);
        let (z_e, z_re) = if self.cfg.fe.enabled {
            let p_emb = self.prompt_encoder.encode(&initial, z.extent());
            enhance_pair(z, z_ref, p_emb.view(), &self.adjust)?
        } else {
            (z.clone(), z_ref.clone())
        };
        let enhanced_similarity = if self.cfg.fe.enabled {
            Some(cosine_similarity_map(&z_e, &z_re)?)
        } else {
            None
        };
        let face = build_face_mask(&sample.parsing, gh, gw, stride)?;
        let sim_e = enhanced_similarity.as_ref().unwrap_or(&similarity);
        let (mut threshold, mut otsu_fallback) = (None, false);
        let selection = match self.cfg.ps.strategy {
            Strategy::Greedy => {
                let ref_sub = extract_masked_tokens(&z_re, &face)?;
                let img_sub = extract_masked_tokens(&z_e, &face)?;
                greedy_match(&z_e, &ref_sub, &img_sub)?
            }
            Strategy::Threshold => {
                threshold = Some(self.cfg.ps.threshold);
                threshold_select(sim_e, &face, self.cfg.ps.threshold)?
            }
            Strategy::Otsu => match otsu_select(sim_e, &face) {
                Ok(o) => {
                    threshold = Some(o.threshold);
                    o.selection
                }
                Err(Error::DegenerateOtsu(_)) => {
                    otsu_fallback = true;
                    threshold = Some(self.cfg.ps.threshold);
                    threshold_select(sim_e, &face, self.cfg.ps.threshold)?
                }
                Err(e) => return Err(e),
            },
        };
        let prompts = PromptSet::from_selection(&selection, gw, stride);
        let keys = match &self.decoder {
            DecoderBackend::Toy(d) => Some(d.keys(z)?),
            DecoderBackend::External(_) => None,
        };
        let context = prompt_context(z, &prompts, self.cfg.ps.prompt_context);
        Ok(Prepared {
            id: sample.id.clone(),
            image_dims: sample.image.dims(),
            grid_h: gh,
            grid_w: gw,
            stride,
            similarity,
            enhanced_similarity,
            initial,
            face,
            selection,
            threshold,
            otsu_fallback,
            prompts,
            face_pixels: sample.parsing.face_region(),
            keys,
            context,
        })
    }

    /// Prompt embeddings `P_E`, occlusion prompts first.
    pub fn embed(&self, prep: &Prepared) -> Array2<f64> {
        self.prompt_encoder.encode_all(&prep.prompts.all(), prep.extent()) + &prep.context
    }

    fn finish(&self, prep: &Prepared, probability: ProbabilityMap, no_occlusion: bool) -> Result<Prediction> {
        let mut mask = if no_occlusion {
            BinaryMask::empty(prep.image_dims.0, prep.image_dims.1)
        } else {
            binarize(&probability, prep.image_dims)?
        };
        if self.cfg.ps.restrict_to_face {
            mask = mask.and(&prep.face_pixels)?;
        }
        Ok(Prediction {
            probability,
            mask,
            no_occlusion,
        })
    }

    /// Probability map and binary mask. With no occlusion prompt the map is all
    /// zeros and the mask empty.
    pub fn predict(&self, prep: &Prepared) -> Result<Prediction> {
        let no_occlusion = !prep.has_occlusion();
        let probability = match &self.decoder {
            DecoderBackend::External(d) => {
                let map = d.load(&prep.id)?;
                let ok = match map.resolution() {
                    Resolution::Image => (map.height(), map.width()) == prep.image_dims,
                    Resolution::Token { stride } => {
                        (map.height(), map.width(), stride) == (prep.grid_h, prep.grid_w, prep.stride)
                    }
                };
                if !ok {
                    return Err(Error::DimensionMismatch {
                        what: "external probability map",
                        expected: prep.image_dims,
                        found: (map.height(), map.width()),
                    });
                }
                map
            }
            DecoderBackend::Toy(_) if no_occlusion => ProbabilityMap::new(
                prep.grid_h,
                prep.grid_w,
                Resolution::Token { stride: prep.stride },
                vec![0.0; prep.grid_h * prep.grid_w],
            )?,
            DecoderBackend::Toy(d) => {
                let keys = prep.keys.as_ref().expect("toy decoder keys");
                let labels = prep.prompts.labels();
                let p_e = self.embed(prep);
                let p = if self.screening_enabled() {
                    self.screening.screen(p_e.view())?
                } else {
                    p_e
                };
                d.decode_keys(keys, p.view(), &labels)?
            }
        };
        self.finish(prep, probability, no_occlusion)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let a = &self.screening.attention;
        Checkpoint {
            dim: self.screening.dim(),
            heads: a.heads,
            q: linear_to_parts(&a.q),
            k: linear_to_parts(&a.k),
            v: linear_to_parts(&a.v),
            out: linear_to_parts(&a.out),
            label_embeddings: self
                .prompt_encoder
                .label_embeddings()
                .outer_iter()
                .map(|r| r.to_vec())
                .collect(),
        }
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let dim = self.screening.dim();
        if ck.dim != dim || ck.heads != self.screening.attention.heads {
            return Err(Error::Config(format!(
                "checkpoint is dim {} heads {}, model is dim {} heads {}",
                ck.dim, ck.heads, dim, self.screening.attention.heads
            )));
        }
        if ck.label_embeddings.len() != 2 || ck.label_embeddings.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("checkpoint label embeddings have the wrong size".into()));
        }
        let a = &mut self.screening.attention;
        a.q = linear_from_parts(&ck.q, dim)?;
        a.k = linear_from_parts(&ck.k, dim)?;
        a.v = linear_from_parts(&ck.v, dim)?;
        a.out = linear_from_parts(&ck.out, dim)?;
        let labels = self.prompt_encoder.label_embeddings_mut();
        for (i, row) in ck.label_embeddings.iter().enumerate() {
            labels.row_mut(i).assign(&Array1::from(row.clone()));
        }
        Ok(())
    }
}
