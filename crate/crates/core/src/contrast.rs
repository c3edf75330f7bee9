//! Feature enhancement: raw/reference token similarity, the initial prompt,
//! the point-prompt encoder and the shared two-way feature adjustment.

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::backends::{PositionalEncoding, TokenGrid};
use crate::error::{Error, Result};
use crate::nn::{Attention, Linear, Mlp};
use crate::seeding::{gaussian_matrix, rng, STREAM_ADJUST, STREAM_LABELS};

/// Norms below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Occlusion.
    Positive,
    /// Face.
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    fn slot(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    /// `(row, col)` on the token grid.
    pub cell: (usize, usize),
    /// `(y, x)` cell centre in image pixels.
    pub pixel: (f64, f64),
    pub label: Label,
}

impl PointPrompt {
    pub fn new(row: usize, col: usize, stride: usize, label: Label) -> Self {
        let s = stride as f64;
        Self {
            cell: (row, col),
            pixel: ((row as f64 + 0.5) * s, (col as f64 + 0.5) * s),
            label,
        }
    }

    pub fn with_label(self, label: Label) -> Self {
        Self { label, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    grid_h: usize,
    grid_w: usize,
    stride: usize,
    values: Vec<f64>,
}

impl SimilarityMap {
    pub fn new(grid_h: usize, grid_w: usize, stride: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid_h * grid_w {
            return Err(Error::DimensionMismatch {
                what: "similarity map length",
                expected: (grid_h, grid_w),
                found: (values.len(), 1),
            });
        }
        if values.is_empty() {
            return Err(Error::Empty("similarity map"));
        }
        Ok(Self {
            grid_h,
            grid_w,
            stride,
            values,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid_w + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine of two vectors; zero when either norm is below [`NORM_EPS`].
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na < NORM_EPS || nb < NORM_EPS {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity_map(z: &TokenGrid, z_ref: &TokenGrid) -> Result<SimilarityMap> {
    if !z.same_shape(z_ref) {
        return Err(Error::DimensionMismatch {
            what: "image vs reference token grid",
            expected: (z.cells(), z.dim()),
            found: (z_ref.cells(), z_ref.dim()),
        });
    }
    let values = z
        .tokens()
        .outer_iter()
        .zip(z_ref.tokens().outer_iter())
        .map(|(a, b)| cosine(a, b))
        .collect();
    SimilarityMap::new(z.grid_h(), z.grid_w(), z.stride(), values)
}

/// Most similar cell, first in row-major order on ties, labelled as face.
pub fn select_initial_prompt(sim: &SimilarityMap) -> PointPrompt {
    let mut best = 0;
    for (i, &v) in sim.values.iter().enumerate() {
        if v > sim.values[best] {
            best = i;
        }
    }
    PointPrompt::new(best / sim.grid_w, best % sim.grid_w, sim.stride, Label::Negative)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptEncoderConfig {
    /// Standard deviation of the random Fourier frequencies.
    pub pe_scale: f64,
    /// Amplitude of each sinusoidal feature.
    pub pe_gain: f64,
    /// Standard deviation of the seeded label embeddings.
    pub label_scale: f64,
}

impl Default for PromptEncoderConfig {
    fn default() -> Self {
        Self {
            pe_scale: 1.0,
            pe_gain: 0.25,
            label_scale: 0.05,
        }
    }
}

/// Point prompt embedding: positional features of the normalized pixel
/// location plus one embedding per label.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEncoder {
    pe: PositionalEncoding,
    /// Row 0 positive, row 1 negative.
    labels: Array2<f64>,
}

impl PromptEncoder {
    pub fn new(dim: usize, seed: u64, cfg: &PromptEncoderConfig) -> Result<Self> {
        let pe = PositionalEncoding::new(dim, seed, cfg.pe_scale, cfg.pe_gain)?;
        let mut r = rng(seed, STREAM_LABELS);
        let labels = gaussian_matrix(&mut r, 2, dim, cfg.label_scale);
        Ok(Self { pe, labels })
    }

    pub fn dim(&self) -> usize {
        self.pe.dim()
    }

    pub fn positional(&self) -> &PositionalEncoding {
        &self.pe
    }

    pub fn label_embedding(&self, label: Label) -> ArrayView1<'_, f64> {
        self.labels.row(label.slot())
    }

    pub fn label_embeddings(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn label_embeddings_mut(&mut self) -> &mut Array2<f64> {
        &mut self.labels
    }

    /// `extent` is the `(height, width)` in pixels covered by the token grid.
    pub fn encode(&self, p: &PointPrompt, extent: (usize, usize)) -> Array1<f64> {
        let y = p.pixel.0 / extent.0 as f64;
        let x = p.pixel.1 / extent.1 as f64;
        self.pe.encode(y, x) + self.label_embedding(p.label)
    }

    /// One embedding per row.
    pub fn encode_all(&self, prompts: &[PointPrompt], extent: (usize, usize)) -> Array2<f64> {
        let mut out = Array2::zeros((prompts.len(), self.dim()));
        for (mut row, p) in out.outer_iter_mut().zip(prompts) {
            row.assign(&self.encode(p, extent));
        }
        out
    }
}

/// Convenience wrapper with the default prompt encoder configuration.
pub fn encode_point_prompt(p: &PointPrompt, dim: usize, seed: u64, extent: (usize, usize)) -> Result<Array1<f64>> {
    Ok(PromptEncoder::new(dim, seed, &PromptEncoderConfig::default())?.encode(p, extent))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeConfig {
    pub enabled: bool,
    pub num_blocks: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
    /// Seeded tokens attending alongside the prompt, as in the SAM decoder.
    pub num_output_tokens: usize,
    /// Gain of query/key/value and MLP hidden projections.
    pub attn_gain: f64,
    /// Gain of every output projection; zero makes the stack the identity.
    pub out_gain: f64,
    pub token_scale: f64,
    pub pe_scale: f64,
    pub pe_gain: f64,
    pub label_scale: f64,
}

impl Default for FeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            num_blocks: 2,
            heads: 4,
            dim: 64,
            mlp_hidden: 128,
            seed: 0,
            num_output_tokens: 4,
            attn_gain: 1.0,
            out_gain: 0.1,
            token_scale: 1.0,
            pe_scale: PromptEncoderConfig::default().pe_scale,
            pe_gain: PromptEncoderConfig::default().pe_gain,
            label_scale: PromptEncoderConfig::default().label_scale,
        }
    }
}

impl FeConfig {
    pub fn prompt_encoder(&self) -> PromptEncoderConfig {
        PromptEncoderConfig {
            pe_scale: self.pe_scale,
            pe_gain: self.pe_gain,
            label_scale: self.label_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "fe.dim {} must be divisible by fe.heads {}",
                self.dim, self.heads
            )));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(Error::Config("fe.dim must be even".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjustBlock {
    /// Prompt tokens attend to the image.
    pub prompt_to_image: Attention,
    pub mlp: Mlp,
    /// Image tokens attend back to the prompt tokens.
    pub image_to_prompt: Attention,
}

/// Weights of the feature-adjustment stack.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjustmentParams {
    pub heads: usize,
    pub blocks: Vec<AdjustBlock>,
    pub output_tokens: Array2<f64>,
    pe: PositionalEncoding,
}

fn seeded_attention(r: &mut rand_chacha::ChaCha8Rng, dim: usize, heads: usize, gain: f64, out_gain: f64) -> Attention {
    Attention {
        heads,
        q: Linear::seeded(r, dim, dim, gain),
        k: Linear::seeded(r, dim, dim, gain),
        v: Linear::seeded(r, dim, dim, gain),
        out: Linear::seeded(r, dim, dim, out_gain),
    }
}

impl AdjustmentParams {
    /// Seeded weights; `pe` supplies the dense image positional encoding.
    pub fn seeded(cfg: &FeConfig, pe: PositionalEncoding) -> Result<Self> {
        cfg.validate()?;
        if pe.dim() != cfg.dim {
            return Err(Error::DimMismatch {
                expected: cfg.dim,
                found: pe.dim(),
            });
        }
        let d = cfg.dim;
        let mut r = rng(cfg.seed, STREAM_ADJUST);
        let blocks = (0..cfg.num_blocks)
            .map(|_| AdjustBlock {
                prompt_to_image: seeded_attention(&mut r, d, cfg.heads, cfg.attn_gain, cfg.out_gain),
                mlp: Mlp {
                    hidden: Linear::seeded(&mut r, d, cfg.mlp_hidden, cfg.attn_gain),
                    out: Linear::seeded(&mut r, cfg.mlp_hidden, d, cfg.out_gain),
                },
                image_to_prompt: seeded_attention(&mut r, d, cfg.heads, cfg.attn_gain, cfg.out_gain),
            })
            .collect();
        let output_tokens = gaussian_matrix(&mut r, cfg.num_output_tokens, d, cfg.token_scale);
        Ok(Self {
            heads: cfg.heads,
            blocks,
            output_tokens,
            pe,
        })
    }

    /// Zeroes every output projection, which turns the stack into the identity.
    pub fn zero_output_projections(&mut self) {
        for b in &mut self.blocks {
            for lin in [&mut b.prompt_to_image.out, &mut b.mlp.out, &mut b.image_to_prompt.out] {
                lin.weight.fill(0.0);
                lin.bias.fill(0.0);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.pe.dim()
    }
}

/// Runs every block: prompt-to-image attention and an MLP update the prompt
/// tokens, then image-to-prompt attention updates every image token.
/// Positional encodings are added to queries and keys only.
pub fn feature_adjust(z: &TokenGrid, p_emb: ArrayView1<'_, f64>, params: &AdjustmentParams) -> Result<TokenGrid> {
    if z.dim() != params.dim() || p_emb.len() != params.dim() {
        return Err(Error::DimMismatch {
            expected: params.dim(),
            found: if z.dim() != params.dim() { z.dim() } else { p_emb.len() },
        });
    }
    let prompt0 = concatenate(Axis(0), &[p_emb.insert_axis(Axis(0)), params.output_tokens.view()])
        .expect("prompt rows share dim");
    let image_pe = params.pe.dense(z.grid_h(), z.grid_w());
    let mut prompt = prompt0.clone();
    let mut image = z.tokens().clone();
    for b in &params.blocks {
        let q = &prompt + &prompt0;
        let k = &image + &image_pe;
        prompt += &b.prompt_to_image.forward(q.view(), k.view(), image.view()).0;
        prompt += &b.mlp.forward(prompt.view());
        let q = &image + &image_pe;
        let k = &prompt + &prompt0;
        image += &b.image_to_prompt.forward(q.view(), k.view(), prompt.view()).0;
    }
    z.with_tokens(image)
}

/// Enhanced pair `(Z_e, Z_re)` from one set of weights and one prompt.
pub fn enhance_pair(
    z: &TokenGrid,
    z_ref: &TokenGrid,
    p_emb: ArrayView1<'_, f64>,
    params: &AdjustmentParams,
) -> Result<(TokenGrid, TokenGrid)> {
    Ok((feature_adjust(z, p_emb, params)?, feature_adjust(z_ref, p_emb, params)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn grid(h: usize, w: usize, tokens: Array2<f64>) -> TokenGrid {
        TokenGrid::new(h, w, 4, tokens).unwrap()
    }

    #[test]
    fn similarity_hand_values() {
        let a = grid(1, 2, array![[1.0, 0.0], [1.0, 0.0]]);
        let b = grid(1, 2, array![[0.0, 1.0], [1.0, 1.0]]);
        let s = cosine_similarity_map(&a, &b).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert!((s.get(0, 1) - 0.70710678).abs() < 1e-8);
        let same = cosine_similarity_map(&a, &a).unwrap();
        assert!(same.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_token_gives_zero_similarity() {
        let a = grid(1, 1, array![[0.0, 0.0]]);
        let b = grid(1, 1, array![[1.0, 2.0]]);
        assert_eq!(cosine_similarity_map(&a, &b).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = grid(1, 2, Array2::ones((2, 3)));
        let b = grid(2, 1, Array2::ones((2, 3)));
        assert!(cosine_similarity_map(&a, &b).is_err());
    }

    #[test]
    fn initial_prompt_tie_breaks_row_major() {
        let mut v = vec![0.0; 12];
        v[2] = 0.8; // (0, 2)
        v[5] = 0.8; // (1, 1)
        let s = SimilarityMap::new(3, 4, 4, v).unwrap();
        let p = select_initial_prompt(&s);
        assert_eq!(p.cell, (0, 2));
        assert_eq!(p.pixel, (2.0, 10.0));
        assert_eq!(p.label, Label::Negative);
        let flat = SimilarityMap::new(2, 2, 4, vec![0.3; 4]).unwrap();
        assert_eq!(select_initial_prompt(&flat).cell, (0, 0));
    }

    #[test]
    fn prompt_encoding_is_additive_in_label() {
        let enc = PromptEncoder::new(16, 3, &PromptEncoderConfig::default()).unwrap();
        let p = PointPrompt::new(2, 3, 4, Label::Positive);
        let n = p.with_label(Label::Negative);
        let (ep, en) = (enc.encode(&p, (32, 32)), enc.encode(&n, (32, 32)));
        let expected = &enc.label_embedding(Label::Positive) - &enc.label_embedding(Label::Negative);
        for (d, e) in (&ep - &en).iter().zip(expected.iter()) {
            assert!((d - e).abs() < 1e-12);
        }
        assert_eq!(ep, enc.encode(&p, (32, 32)));
        let moved = PointPrompt::new(5, 1, 4, Label::Positive);
        assert_ne!(enc.encode(&moved, (32, 32)), ep);
        assert_eq!(encode_point_prompt(&p, 16, 3, (32, 32)).unwrap(), {
            PromptEncoder::new(16, 3, &PromptEncoderConfig::default()).unwrap().encode(&p, (32, 32))
        });
    }

    fn small_cfg() -> FeConfig {
        FeConfig {
            dim: 8,
            heads: 2,
            mlp_hidden: 16,
            num_output_tokens: 2,
            ..FeConfig::default()
        }
    }

    fn params(cfg: &FeConfig) -> AdjustmentParams {
        AdjustmentParams::seeded(cfg, PositionalEncoding::new(cfg.dim, cfg.seed, 1.0, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn zero_output_projections_are_identity() {
        let mut p = params(&small_cfg());
        p.zero_output_projections();
        let z = grid(3, 2, Array2::from_shape_fn((6, 8), |(i, j)| (i as f64 * 0.3 - j as f64 * 0.1).sin()));
        let e = Array1::from_shape_fn(8, |j| j as f64 * 0.1);
        assert_eq!(feature_adjust(&z, e.view(), &p).unwrap(), z);
    }

    #[test]
    fn adjust_preserves_shape_and_is_deterministic() {
        let cfg = small_cfg();
        let z = grid(3, 2, Array2::from_shape_fn((6, 8), |(i, j)| (i * 8 + j) as f64 * 0.05 - 1.0));
        let e = Array1::from_elem(8, 0.2);
        let a = feature_adjust(&z, e.view(), &params(&cfg)).unwrap();
        let b = feature_adjust(&z, e.view(), &params(&cfg)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.grid_h(), a.grid_w(), a.dim()), (3, 2, 8));
        assert!(a.tokens().iter().all(|v| v.is_finite()));
        assert_ne!(a, z);
        let wrong = Array1::zeros(4);
        assert!(feature_adjust(&z, wrong.view(), &params(&cfg)).is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = FeConfig {
            heads: 3,
            ..small_cfg()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn rescaling_tokens_keeps_similarity(
            seed in 0u64..1000,
            scales in proptest::collection::vec(1e-3f64..1e3, 12),
        ) {
            let mut r = rng(seed, 0);
            let a = gaussian_matrix(&mut r, 12, 6, 1.0);
            let b = gaussian_matrix(&mut r, 12, 6, 1.0);
            let s = Array1::from(scales).insert_axis(Axis(1));
            let base = cosine_similarity_map(&grid(3, 4, a.clone()), &grid(3, 4, b.clone())).unwrap();
            let scaled = cosine_similarity_map(&grid(3, 4, &a * &s), &grid(3, 4, &b * &s)).unwrap();
            for (x, y) in base.values().iter().zip(scaled.values()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
            prop_assert_eq!(select_initial_prompt(&base).cell, select_initial_prompt(&scaled).cell);
        }
    }
}
