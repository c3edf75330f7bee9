//! Prompt selection: the token-level face mask, masked token subsets,
//! greedy matching, the threshold and Otsu baselines, and self-attention
//! screening of the prompt embeddings.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::backends::TokenGrid;
use crate::contrast::{Label, PointPrompt, SimilarityMap, NORM_EPS};
use crate::dataset::ParsingMask;
use crate::error::{Error, Result};
use crate::nn::{Attention, AttentionCache, AttentionGrad, Linear};
use crate::seeding::{rng, STREAM_SCREEN};

/// Token cells whose pixel block is mostly face.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceRegionMask {
    grid_h: usize,
    grid_w: usize,
    stride: usize,
    cells: Vec<bool>,
}

impl FaceRegionMask {
    pub fn from_cells(grid_h: usize, grid_w: usize, stride: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid_h * grid_w {
            return Err(Error::DimensionMismatch {
                what: "face mask cells",
                expected: (grid_h, grid_w),
                found: (cells.len(), 1),
            });
        }
        if !cells.iter().any(|&c| c) {
            return Err(Error::EmptyFace);
        }
        Ok(Self {
            grid_h,
            grid_w,
            stride,
            cells,
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

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.grid_w + col]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn active_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Flat indices of active cells in row-major order.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i]).collect()
    }

    fn check_grid(&self, grid_h: usize, grid_w: usize) -> Result<()> {
        if (grid_h, grid_w) != (self.grid_h, self.grid_w) {
            return Err(Error::DimensionMismatch {
                what: "face mask vs token grid",
                expected: (self.grid_h, self.grid_w),
                found: (grid_h, grid_w),
            });
        }
        Ok(())
    }
}

/// Majority-pools the face labels of `parsing` onto the token grid.
/// A block exactly half face counts as face. Blocks reaching past the image
/// border are judged on their in-image pixels.
pub fn build_face_mask(parsing: &ParsingMask, grid_h: usize, grid_w: usize, stride: usize) -> Result<FaceRegionMask> {
    let (h, w) = parsing.dims();
    if grid_h * stride < h || grid_w * stride < w || grid_h == 0 || grid_w == 0 {
        return Err(Error::DimensionMismatch {
            what: "token grid extent vs parsing mask",
            expected: (h, w),
            found: (grid_h * stride, grid_w * stride),
        });
    }
    let lut = parsing.table().face_lut();
    let mut cells = vec![false; grid_h * grid_w];
    for r in 0..grid_h {
        for c in 0..grid_w {
            let (mut face, mut total) = (0usize, 0usize);
            for y in r * stride..((r + 1) * stride).min(h) {
                for x in c * stride..((c + 1) * stride).min(w) {
                    total += 1;
                    face += usize::from(lut[parsing.label(y, x) as usize]);
                }
            }
            cells[r * grid_w + c] = total > 0 && 2 * face >= total;
        }
    }
    FaceRegionMask::from_cells(grid_h, grid_w, stride, cells)
}

/// Rows of a token grid at the active cells of a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSubset {
    /// Flat cell indices, row-major.
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
}

impl TokenSubset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Writes the subset rows back into a copy of `base`.
    pub fn scatter(&self, base: &TokenGrid) -> Result<TokenGrid> {
        let mut tokens = base.tokens().clone();
        for (row, &i) in self.features.outer_iter().zip(&self.indices) {
            tokens.row_mut(i).assign(&row);
        }
        base.with_tokens(tokens)
    }
}

pub fn extract_masked_tokens(grid: &TokenGrid, mask: &FaceRegionMask) -> Result<TokenSubset> {
    mask.check_grid(grid.grid_h(), grid.grid_w())?;
    let indices = mask.active_indices();
    if indices.is_empty() {
        return Err(Error::EmptyFace);
    }
    let features = grid.tokens().select(Axis(0), &indices);
    Ok(TokenSubset { indices, features })
}

/// Face cells split into non-occlusion (`P_N`) and occlusion (`P_O`) sets.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Selection {
    /// Flat cell indices, ascending.
    pub non_occlusion: Vec<usize>,
    pub occlusion: Vec<usize>,
}

impl Selection {
    fn from_flags(indices: &[usize], occluded: impl Fn(usize) -> bool) -> Self {
        let (occlusion, non_occlusion) = indices.iter().partition(|&&i| occluded(i));
        Self {
            non_occlusion,
            occlusion,
        }
    }

    pub fn len(&self) -> usize {
        self.non_occlusion.len() + self.occlusion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn l2_normalize_rows(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.outer_iter_mut() {
        let n = row.dot(&row).sqrt();
        if n < NORM_EPS {
            row.fill(0.0);
        } else {
            row /= n;
        }
    }
    out
}

/// Cosine similarity of every row of `a` against every row of `b`.
pub fn cosine_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    l2_normalize_rows(a).dot(&l2_normalize_rows(b).t())
}

fn pair_order(s: &Array2<f64>, a: (usize, usize), b: (usize, usize)) -> Ordering {
    s[b].total_cmp(&s[a]).then(a.cmp(&b))
}

/// Repeated global argmax over unused rows and columns, ties to the smallest
/// `(row, col)`; returns `min(rows, cols)` pairs in selection order.
///
/// Implemented as one sort of all entries followed by a single scan, which
/// selects the same pairs as the repeated argmax.
pub fn greedy_pairs(s: &Array2<f64>) -> Vec<(usize, usize)> {
    let (n, k) = s.dim();
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    entries.sort_unstable_by(|&a, &b| pair_order(s, a, b));
    let (mut row_used, mut col_used) = (vec![false; n], vec![false; k]);
    let target = n.min(k);
    let mut pairs = Vec::with_capacity(target);
    for (i, j) in entries {
        if pairs.len() == target {
            break;
        }
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Literal `O(K * N * K)` form of [`greedy_pairs`].
pub fn greedy_pairs_naive(s: &Array2<f64>) -> Vec<(usize, usize)> {
    let (n, k) = s.dim();
    let (mut row_used, mut col_used) = (vec![false; n], vec![false; k]);
    let mut pairs = Vec::new();
    for _ in 0..n.min(k) {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| !row_used[i]) {
            for j in (0..k).filter(|&j| !col_used[j]) {
                if best.is_none_or(|b| pair_order(s, (i, j), b) == Ordering::Less) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("an unused pair remains");
        row_used[i] = true;
        col_used[j] = true;
        pairs.push((i, j));
    }
    pairs
}

/// Matches every enhanced image token against the face-region reference
/// tokens. Face cells whose row got matched are non-occlusion; the rest of
/// the face cells are occlusion. `img_sub` fixes the face cells.
pub fn greedy_match(z_e: &TokenGrid, ref_sub: &TokenSubset, img_sub: &TokenSubset) -> Result<Selection> {
    if ref_sub.is_empty() || img_sub.is_empty() {
        return Err(Error::Empty("token subset"));
    }
    if ref_sub.len() != img_sub.len() || ref_sub.indices != img_sub.indices {
        return Err(Error::DimensionMismatch {
            what: "reference vs image subset",
            expected: (img_sub.len(), img_sub.features.ncols()),
            found: (ref_sub.len(), ref_sub.features.ncols()),
        });
    }
    if ref_sub.features.ncols() != z_e.dim() {
        return Err(Error::DimMismatch {
            expected: z_e.dim(),
            found: ref_sub.features.ncols(),
        });
    }
    if z_e.cells() < ref_sub.len() {
        return Err(Error::DimensionMismatch {
            what: "grid cells vs face subset",
            expected: (ref_sub.len(), 1),
            found: (z_e.cells(), 1),
        });
    }
    let s = cosine_matrix(z_e.tokens().view(), ref_sub.features.view());
    let mut matched = vec![false; z_e.cells()];
    for (i, _) in greedy_pairs(&s) {
        matched[i] = true;
    }
    Ok(Selection::from_flags(&img_sub.indices, |i| !matched[i]))
}

fn face_values(sim: &SimilarityMap, mask: &FaceRegionMask) -> Result<(Vec<usize>, Vec<f64>)> {
    mask.check_grid(sim.grid_h(), sim.grid_w())?;
    let idx = mask.active_indices();
    if idx.is_empty() {
        return Err(Error::EmptyFace);
    }
    let vals = idx.iter().map(|&i| sim.values()[i]).collect();
    Ok((idx, vals))
}

/// Face cells with similarity below `t` are occlusion.
pub fn threshold_select(sim: &SimilarityMap, mask: &FaceRegionMask, t: f64) -> Result<Selection> {
    let (idx, _) = face_values(sim, mask)?;
    Ok(Selection::from_flags(&idx, |i| sim.values()[i] < t))
}

pub const OTSU_BINS: usize = 256;

/// Smaller spreads are rounding noise, e.g. self-similarities of 1 +- 1 ulp.
pub const OTSU_MIN_SPREAD: f64 = 1e-9;

/// 256-bin histogram over `[min, max]` of `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub width: f64,
    pub counts: [usize; OTSU_BINS],
}

impl Histogram {
    /// Errors when the values span less than [`OTSU_MIN_SPREAD`].
    pub fn new(values: &[f64]) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Err(Error::Empty("otsu values"));
        }
        if max - min < OTSU_MIN_SPREAD {
            return Err(Error::DegenerateOtsu(min));
        }
        let width = (max - min) / OTSU_BINS as f64;
        let mut h = Self {
            min,
            width,
            counts: [0; OTSU_BINS],
        };
        for &v in values {
            let b = h.bin(v);
            h.counts[b] += 1;
        }
        Ok(h)
    }

    pub fn bin(&self, v: f64) -> usize {
        (((v - self.min) / self.width).floor().max(0.0) as usize).min(OTSU_BINS - 1)
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.min + (bin as f64 + 0.5) * self.width
    }

    /// Lower edge of `bin`.
    pub fn edge(&self, bin: usize) -> f64 {
        self.min + bin as f64 * self.width
    }
}

/// Otsu split: the bin `k` in `1..256` maximizing the between-class variance
/// `w0 * w1 * (mu0 - mu1)^2` of bins `< k` versus `>= k`, first on ties.
/// Bin centres stand in for the values.
pub fn otsu_bin(hist: &Histogram) -> usize {
    let total: f64 = hist.counts.iter().sum::<usize>() as f64;
    let sum_all: f64 = (0..OTSU_BINS).map(|b| hist.counts[b] as f64 * hist.center(b)).sum();
    let (mut n0, mut s0) = (0.0, 0.0);
    let (mut best_k, mut best) = (1, f64::NEG_INFINITY);
    for k in 1..OTSU_BINS {
        n0 += hist.counts[k - 1] as f64;
        s0 += hist.counts[k - 1] as f64 * hist.center(k - 1);
        let n1 = total - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let (mu0, mu1) = (s0 / n0, (sum_all - s0) / n1);
        let var = (n0 / total) * (n1 / total) * (mu0 - mu1).powi(2);
        if var > best {
            best = var;
            best_k = k;
        }
    }
    best_k
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtsuSelection {
    pub selection: Selection,
    /// Values below this edge are occlusion.
    pub threshold: f64,
}

pub fn otsu_select(sim: &SimilarityMap, mask: &FaceRegionMask) -> Result<OtsuSelection> {
    let (idx, vals) = face_values(sim, mask)?;
    let hist = Histogram::new(&vals)?;
    let k = otsu_bin(&hist);
    Ok(OtsuSelection {
        selection: Selection::from_flags(&idx, |i| hist.bin(sim.values()[i]) < k),
        threshold: hist.edge(k),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Greedy,
    Threshold,
    Otsu,
}

/// Point prompts from a selection, occlusion first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub occlusion: Vec<PointPrompt>,
    pub non_occlusion: Vec<PointPrompt>,
}

impl PromptSet {
    pub fn from_selection(sel: &Selection, grid_w: usize, stride: usize) -> Self {
        let to_prompts = |cells: &[usize], label| {
            cells
                .iter()
                .map(|&i| PointPrompt::new(i / grid_w, i % grid_w, stride, label))
                .collect()
        };
        Self {
            occlusion: to_prompts(&sel.occlusion, Label::Positive),
            non_occlusion: to_prompts(&sel.non_occlusion, Label::Negative),
        }
    }

    pub fn len(&self) -> usize {
        self.occlusion.len() + self.non_occlusion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All prompts in embedding row order.
    pub fn all(&self) -> Vec<PointPrompt> {
        self.occlusion.iter().chain(&self.non_occlusion).copied().collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.all().iter().map(|p| p.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub enabled: bool,
    pub heads: usize,
    pub seed: u64,
    /// Gain of the query/key/value projections; the output projection starts at zero.
    pub init_gain: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            heads: 4,
            seed: 0,
            init_gain: 1.0,
        }
    }
}

/// Self-attention screening layer `P' = P + SA(P)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Screening {
    pub attention: Attention,
}

pub struct ScreenCache(AttentionCache);

impl ScreenCache {
    pub fn attention_weights(&self) -> &[Array2<f64>] {
        self.0.weights()
    }
}

pub type ScreenGrad = AttentionGrad;

impl Screening {
    /// Seeded projections with a zero output projection, so the untrained
    /// layer passes prompts through unchanged.
    pub fn new(dim: usize, cfg: &ScreenConfig) -> Result<Self> {
        if cfg.heads == 0 || !dim.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "embedding dim {dim} must be divisible by ps.sa.heads {}",
                cfg.heads
            )));
        }
        let mut r = rng(cfg.seed, STREAM_SCREEN);
        Ok(Self {
            attention: Attention {
                heads: cfg.heads,
                q: Linear::seeded(&mut r, dim, dim, cfg.init_gain),
                k: Linear::seeded(&mut r, dim, dim, cfg.init_gain),
                v: Linear::seeded(&mut r, dim, dim, cfg.init_gain),
                out: Linear::zeros(dim, dim),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.attention.dim()
    }

    pub fn forward(&self, p: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ScreenCache)> {
        if p.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: p.ncols(),
            });
        }
        if p.nrows() == 0 {
            return Err(Error::Empty("prompt set"));
        }
        let (delta, cache) = self.attention.forward(p, p, p);
        Ok((&p + &delta, ScreenCache(cache)))
    }

    pub fn screen(&self, p: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(p)?.0)
    }

    /// Parameter gradients and `dL/dP` given `dL/dP'`.
    pub fn backward(&self, cache: &ScreenCache, d_out: ArrayView2<'_, f64>) -> (ScreenGrad, Array2<f64>) {
        let (g, dq, dk, dv) = self.attention.backward(&cache.0, d_out);
        (g, &d_out + &dq + &dk + &dv)
    }

    /// Flat parameter views in a fixed order, for optimizers.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let a = &mut self.attention;
        let mut out = Vec::with_capacity(8);
        for lin in [&mut a.q, &mut a.k, &mut a.v, &mut a.out] {
            out.push(lin.weight.as_slice_mut().expect("contiguous weight"));
            out.push(lin.bias.as_slice_mut().expect("contiguous bias"));
        }
        out
    }
}

impl ScreenGrad {
    /// Flat gradient views in the same order as [`Screening::params_mut`].
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(8);
        for g in [&self.q, &self.k, &self.v, &self.out] {
            out.push(g.weight.as_slice().expect("contiguous"));
            out.push(g.bias.as_slice().expect("contiguous"));
        }
        out
    }
}

/// Screened embeddings with the prompt labels carried alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenedPrompts {
    pub embeddings: Array2<f64>,
    pub labels: Vec<Label>,
}

pub fn screen_prompts(p_e: ArrayView2<'_, f64>, labels: &[Label], layer: &Screening) -> Result<ScreenedPrompts> {
    Ok(ScreenedPrompts {
        embeddings: layer.screen(p_e)?,
        labels: labels.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabelTable;
    use crate::seeding::gaussian_matrix;
    use ndarray::array;
    use proptest::prelude::*;

    fn table() -> LabelTable {
        LabelTable::from_pairs([(0u8, "background"), (1, "skin"), (7, "hair")])
    }

    #[test]
    fn face_mask_majority_with_ties_active() {
        // 4x4 image, stride 2: cell (0,0) half skin, cell (0,1) one skin pixel
        let mut labels = vec![0u8; 16];
        labels[0] = 1;
        labels[1] = 1;
        labels[3] = 1;
        for i in 8..16 {
            labels[i] = 7;
        }
        let pm = ParsingMask::new(4, 4, labels, table()).unwrap();
        let m = build_face_mask(&pm, 2, 2, 2).unwrap();
        assert_eq!(m.cells(), &[true, false, false, false]);
        assert_eq!(m.active_count(), 1);

        let bg = ParsingMask::new(4, 4, vec![0; 16], table()).unwrap();
        assert!(matches!(build_face_mask(&bg, 2, 2, 2), Err(Error::EmptyFace)));
        let skin = ParsingMask::new(4, 4, vec![1; 16], table()).unwrap();
        assert_eq!(build_face_mask(&skin, 2, 2, 2).unwrap().active_count(), 4);
    }

    #[test]
    fn extract_and_scatter_round_trip() {
        let grid = TokenGrid::new(2, 3, 4, Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64)).unwrap();
        let mask = FaceRegionMask::from_cells(2, 3, 4, vec![false, true, false, true, true, false]).unwrap();
        let sub = extract_masked_tokens(&grid, &mask).unwrap();
        assert_eq!(sub.indices, vec![1, 3, 4]);
        assert_eq!(sub.features.row(0), grid.token(0, 1));
        assert_eq!(sub.scatter(&grid).unwrap(), grid);
        let zeros = grid.with_tokens(Array2::zeros((6, 2))).unwrap();
        let back = sub.scatter(&zeros).unwrap();
        for &i in &sub.indices {
            assert_eq!(back.tokens().row(i), grid.tokens().row(i));
        }
        assert_eq!(back.tokens().row(0).sum(), 0.0);
    }

    #[test]
    fn greedy_hand_example() {
        let s = array![[0.9, 0.1], [0.2, 0.8], [0.3, 0.4]];
        assert_eq!(greedy_pairs(&s), vec![(0, 0), (1, 1)]);
        assert_eq!(greedy_pairs_naive(&s), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn greedy_ties_go_to_smallest_pair() {
        let s = Array2::from_elem((3, 2), 0.5);
        assert_eq!(greedy_pairs(&s), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn identical_grids_have_no_occlusion() {
        let mut r = rng(3, 0);
        let tokens = gaussian_matrix(&mut r, 12, 5, 1.0);
        let grid = TokenGrid::new(3, 4, 4, tokens).unwrap();
        let cells = (0..12).map(|i| i % 3 != 0).collect();
        let mask = FaceRegionMask::from_cells(3, 4, 4, cells).unwrap();
        let sub = extract_masked_tokens(&grid, &mask).unwrap();
        let sel = greedy_match(&grid, &sub, &sub).unwrap();
        assert!(sel.occlusion.is_empty());
        assert_eq!(sel.non_occlusion, mask.active_indices());
    }

    fn sim(values: Vec<f64>) -> SimilarityMap {
        let n = values.len();
        SimilarityMap::new(1, n, 4, values).unwrap()
    }

    fn full(n: usize) -> FaceRegionMask {
        FaceRegionMask::from_cells(1, n, 4, vec![true; n]).unwrap()
    }

    #[test]
    fn threshold_baseline() {
        let s = sim(vec![0.4, 0.6]);
        let sel = threshold_select(&s, &full(2), 0.5).unwrap();
        assert_eq!((sel.occlusion, sel.non_occlusion), (vec![0], vec![1]));
        assert!(threshold_select(&sim(vec![0.9; 3]), &full(3), 0.5).unwrap().occlusion.is_empty());
        assert!(threshold_select(&sim(vec![0.1; 3]), &full(3), 0.5).unwrap().non_occlusion.is_empty());
    }

    #[test]
    fn otsu_hand_examples() {
        let mut v = vec![0.1; 10];
        v.extend(vec![0.9; 10]);
        let out = otsu_select(&sim(v), &full(20)).unwrap();
        assert!(out.threshold > 0.1 && out.threshold < 0.9);
        assert_eq!(out.selection.occlusion, (0..10).collect::<Vec<_>>());

        let out = otsu_select(&sim(vec![0.2, 0.21, 0.8, 0.82, 0.85]), &full(5)).unwrap();
        assert_eq!(out.selection.occlusion, vec![0, 1]);
        assert!(matches!(
            otsu_select(&sim(vec![0.4; 4]), &full(4)),
            Err(Error::DegenerateOtsu(_))
        ));
        let one = 1.0f64;
        assert!(matches!(
            otsu_select(&sim(vec![one, one - f64::EPSILON, one, one + f64::EPSILON]), &full(4)),
            Err(Error::DegenerateOtsu(_))
        ));
    }

    fn layer(dim: usize, heads: usize, seed: u64) -> Screening {
        Screening::new(
            dim,
            &ScreenConfig {
                heads,
                seed,
                ..ScreenConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn fresh_screening_is_identity() {
        let mut r = rng(1, 0);
        let p = gaussian_matrix(&mut r, 5, 8, 1.0);
        assert_eq!(layer(8, 2, 0).screen(p.view()).unwrap(), p);
    }

    #[test]
    fn single_prompt_closed_form() {
        let mut l = layer(8, 2, 4);
        let mut r = rng(2, 0);
        l.attention.out = Linear::seeded(&mut r, 8, 8, 1.0);
        let p = gaussian_matrix(&mut r, 1, 8, 1.0);
        let a = &l.attention;
        let expected = &p + &a.out.forward(a.v.forward(p.view()).view());
        let got = l.screen(p.view()).unwrap();
        for (x, y) in got.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn screening_backward_matches_finite_differences() {
        let mut l = layer(8, 2, 6);
        let mut r = rng(5, 0);
        l.attention.out = Linear::seeded(&mut r, 8, 8, 1.0);
        let p = gaussian_matrix(&mut r, 4, 8, 1.0);
        let probe = gaussian_matrix(&mut r, 4, 8, 1.0);
        let f = |x: &Array2<f64>| (&l.screen(x.view()).unwrap() * &probe).sum();
        let (_, cache) = l.forward(p.view()).unwrap();
        let (_, dp) = l.backward(&cache, probe.view());
        let h = 1e-6;
        for (i, j) in [(0, 0), (3, 7), (2, 4)] {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[[i, j]] += h;
            b[[i, j]] -= h;
            let num = (f(&a) - f(&b)) / (2.0 * h);
            assert!((num - dp[[i, j]]).abs() < 1e-6 * num.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn screening_is_permutation_equivariant(seed in 0u64..500, n in 1usize..7) {
            let mut l = layer(8, 4, seed);
            let mut r = rng(seed, 1);
            l.attention.out = Linear::seeded(&mut r, 8, 8, 1.0);
            let p = gaussian_matrix(&mut r, n, 8, 1.0);
            let perm: Vec<usize> = (0..n).rev().collect();
            let a = l.screen(p.view()).unwrap().select(Axis(0), &perm);
            let b = l.screen(p.select(Axis(0), &perm).view()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn greedy_partitions_face_cells(seed in 0u64..1000, h in 1usize..6, w in 1usize..6) {
            let mut r = rng(seed, 2);
            let n = h * w;
            let z = TokenGrid::new(h, w, 4, gaussian_matrix(&mut r, n, 4, 1.0)).unwrap();
            let zr = TokenGrid::new(h, w, 4, gaussian_matrix(&mut r, n, 4, 1.0)).unwrap();
            let cells: Vec<bool> = (0..n).map(|i| !(seed as usize + i).is_multiple_of(3) || i == 0).collect();
            let mask = FaceRegionMask::from_cells(h, w, 4, cells).unwrap();
            let sel = greedy_match(
                &z,
                &extract_masked_tokens(&zr, &mask).unwrap(),
                &extract_masked_tokens(&z, &mask).unwrap(),
            ).unwrap();
            prop_assert_eq!(sel.len(), mask.active_count());
            let mut all: Vec<usize> = sel.occlusion.iter().chain(&sel.non_occlusion).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, mask.active_indices());
        }

        #[test]
        fn sorted_scan_equals_naive(seed in 0u64..1000, n in 1usize..10, k in 1usize..10, levels in 2u32..6) {
            let mut r = rng(seed, 3);
            let s = gaussian_matrix(&mut r, n, k, 1.0).mapv(|v| (v * levels as f64).round() / levels as f64);
            prop_assert_eq!(greedy_pairs(&s), greedy_pairs_naive(&s));
        }
    }
}
