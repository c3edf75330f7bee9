use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::arrayfile::ArrayFile;
use super::grid::{ProbabilityMap, Resolution, TokenGrid};
use super::positional::PositionalEncoding;
use crate::contrast::Label;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decoder keys for one image: tokens plus (optionally) their dense positional encoding.
#[derive(Clone, Debug)]
pub struct DecoderKeys {
    grid_h: usize,
    grid_w: usize,
    stride: usize,
    keys: Array2<f64>,
}

impl DecoderKeys {
    pub fn keys(&self) -> &Array2<f64> {
        &self.keys
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn dim(&self) -> usize {
        self.keys.ncols()
    }
}

/// Minimal prompt-conditioned scorer:
/// `q(cell) = sigmoid(sum_k w_k <key(cell), e_k> / sqrt(d))` with `w_k = +1`
/// for positive (occlusion) prompts and `-1` for negative (face) prompts.
/// `key(cell)` is the image token, plus the dense positional encoding of the
/// cell centre when one is attached, so that point prompts act locally.
#[derive(Clone, Debug, Default)]
pub struct ToyDecoder {
    dense_pe: Option<PositionalEncoding>,
}

impl ToyDecoder {
    /// Decoder scoring raw tokens only.
    pub fn plain() -> Self {
        Self { dense_pe: None }
    }

    pub fn with_positional(pe: PositionalEncoding) -> Self {
        Self { dense_pe: Some(pe) }
    }

    pub fn keys(&self, tokens: &TokenGrid) -> Result<DecoderKeys> {
        let mut keys = tokens.tokens().clone();
        if let Some(pe) = &self.dense_pe {
            if pe.dim() != tokens.dim() {
                return Err(Error::DimMismatch {
                    expected: tokens.dim(),
                    found: pe.dim(),
                });
            }
            keys += &pe.dense(tokens.grid_h(), tokens.grid_w());
        }
        Ok(DecoderKeys {
            grid_h: tokens.grid_h(),
            grid_w: tokens.grid_w(),
            stride: tokens.stride(),
            keys,
        })
    }

    /// Signed prompt sum `sum_k w_k e_k`.
    fn direction(embeddings: ArrayView2<'_, f64>, labels: &[Label]) -> Result<Array1<f64>> {
        if embeddings.nrows() == 0 {
            return Err(Error::Empty("prompt set"));
        }
        if embeddings.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "prompt embeddings vs labels",
                expected: (labels.len(), embeddings.ncols()),
                found: embeddings.dim(),
            });
        }
        let mut v = Array1::zeros(embeddings.ncols());
        for (e, l) in embeddings.outer_iter().zip(labels) {
            v.scaled_add(l.sign(), &e);
        }
        Ok(v)
    }

    pub fn logits(
        &self,
        keys: &DecoderKeys,
        embeddings: ArrayView2<'_, f64>,
        labels: &[Label],
    ) -> Result<Array1<f64>> {
        if embeddings.ncols() != keys.dim() {
            return Err(Error::DimMismatch {
                expected: keys.dim(),
                found: embeddings.ncols(),
            });
        }
        let v = Self::direction(embeddings, labels)?;
        Ok(keys.keys.dot(&v) / (keys.dim() as f64).sqrt())
    }

    pub fn decode_keys(
        &self,
        keys: &DecoderKeys,
        embeddings: ArrayView2<'_, f64>,
        labels: &[Label],
    ) -> Result<ProbabilityMap> {
        let logits = self.logits(keys, embeddings, labels)?;
        ProbabilityMap::new(
            keys.grid_h,
            keys.grid_w,
            Resolution::Token {
                stride: keys.stride,
            },
            logits.iter().map(|&z| sigmoid(z)).collect(),
        )
    }

    pub fn decode(
        &self,
        tokens: &TokenGrid,
        embeddings: ArrayView2<'_, f64>,
        labels: &[Label],
    ) -> Result<ProbabilityMap> {
        self.decode_keys(&self.keys(tokens)?, embeddings, labels)
    }

    /// Gradient with respect to every prompt embedding given `dL/dlogit` per cell.
    pub fn backward(&self, keys: &DecoderKeys, labels: &[Label], d_logits: &Array1<f64>) -> Array2<f64> {
        let g = keys.keys.t().dot(d_logits) / (keys.dim() as f64).sqrt();
        let mut out = Array2::zeros((labels.len(), keys.dim()));
        for (mut row, l) in out.axis_iter_mut(Axis(0)).zip(labels) {
            row.scaled_add(l.sign(), &g);
        }
        out
    }
}

/// Reads decoder output produced out of process as `<sample_id>.prob.bin`.
#[derive(Clone, Debug)]
pub struct ExternalDecoder {
    dir: PathBuf,
}

impl ExternalDecoder {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn load(&self, sample_id: &str) -> Result<ProbabilityMap> {
        ArrayFile::read(&self.dir.join(format!("{sample_id}.prob.bin")))?.into_probability_map()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid(tokens: Array2<f64>, h: usize, w: usize) -> TokenGrid {
        TokenGrid::new(h, w, 4, tokens).unwrap()
    }

    #[test]
    fn matching_positive_prompt_peaks_at_its_cell() {
        // four cells with orthogonal tokens; the prompt equals cell 2's token
        let tokens = Array2::from_diag(&array![1.0, 1.0, 1.0, 1.0]);
        let g = grid(tokens, 2, 2);
        let e = array![[0.0, 0.0, 1.0, 0.0]];
        let map = ToyDecoder::plain().decode(&g, e.view(), &[Label::Positive]).unwrap();
        let best = (0..4).max_by(|&a, &b| map.values()[a].total_cmp(&map.values()[b])).unwrap();
        assert_eq!(best, 2);
        assert!((map.values()[2] - sigmoid(0.5)).abs() < 1e-12);
        assert_eq!(map.values()[0], 0.5);
    }

    #[test]
    fn zero_embeddings_give_uniform_half() {
        let g = grid(Array2::from_elem((6, 4), 0.3), 2, 3);
        let e = Array2::zeros((3, 4));
        let map = ToyDecoder::plain()
            .decode(&g, e.view(), &[Label::Positive, Label::Negative, Label::Negative])
            .unwrap();
        assert!(map.values().iter().all(|&q| q == 0.5));
    }

    #[test]
    fn label_flip_maps_q_to_one_minus_q() {
        let pe = PositionalEncoding::new(4, 3, 1.0, 1.0).unwrap();
        let dec = ToyDecoder::with_positional(pe);
        let tokens = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4);
        let g = grid(tokens, 2, 3);
        let e = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let labels = [Label::Positive, Label::Negative, Label::Positive];
        let flipped: Vec<Label> = labels.iter().map(|l| l.flipped()).collect();
        let a = dec.decode(&g, e.view(), &labels).unwrap();
        let b = dec.decode(&g, e.view(), &flipped).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            assert!((p + q - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_prompt_set_is_an_error() {
        let g = grid(Array2::zeros((4, 2)), 2, 2);
        let e = Array2::zeros((0, 2));
        assert!(matches!(
            ToyDecoder::plain().decode(&g, e.view(), &[]),
            Err(Error::Empty(_))
        ));
    }
}
