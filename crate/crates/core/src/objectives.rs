//! Self-supervised objectives on decoder probabilities sampled at prompt
//! locations, their analytic gradients, and a finite-difference checker.

use serde::{Deserialize, Serialize};

use crate::backends::{sigmoid, ProbabilityMap, Resolution};
use crate::contrast::PointPrompt;
use crate::error::{Error, Result};
use crate::selection::PromptSet;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the face penalty.
    pub lambda: f64,
    /// Steepness of the face penalty sigmoid.
    pub alpha: f64,
    /// Probability clamp applied before any log.
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha: 10.0,
            eps: DEFAULT_EPS,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.alpha > 0.0) || !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!(
                "need lambda >= 0, alpha > 0 and eps in (0, 0.5); got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which terms enter the total; used by the loss ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    pub recall_occ: bool,
    pub recall_face: bool,
    pub face_penalty: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            recall_occ: true,
            recall_face: true,
            face_penalty: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub eps: f64,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda: w.lambda,
            alpha: w.alpha,
            eps: w.eps,
            terms: LossTerms::default(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            alpha: self.alpha,
            eps: self.eps,
        }
    }
}

/// Probabilities at occlusion (`q_occ`) and face (`q_face`) prompts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QSamples {
    pub q_occ: Vec<f64>,
    pub q_face: Vec<f64>,
}

fn lookup(map: &ProbabilityMap, p: &PointPrompt, eps: f64) -> Result<f64> {
    let (r, c) = p.cell;
    let (y, x) = match map.resolution() {
        Resolution::Token { .. } => (r, c),
        Resolution::Image => (p.pixel.0.floor() as usize, p.pixel.1.floor() as usize),
    };
    if y >= map.height() || x >= map.width() {
        return Err(Error::OutOfBounds {
            row: r,
            col: c,
            grid_h: map.height(),
            grid_w: map.width(),
        });
    }
    Ok(map.get(y, x).clamp(eps, 1.0 - eps))
}

/// Token-resolution maps are read at the prompt cell, image-resolution maps at
/// the pixel holding the cell centre. Values are clamped to `[eps, 1 - eps]`.
pub fn sample_probabilities(map: &ProbabilityMap, prompts: &PromptSet, eps: f64) -> Result<QSamples> {
    let q = |ps: &[PointPrompt]| ps.iter().map(|p| lookup(map, p, eps)).collect::<Result<Vec<_>>>();
    Ok(QSamples {
        q_occ: q(&prompts.occlusion)?,
        q_face: q(&prompts.non_occlusion)?,
    })
}

fn nonempty(q: &[f64], what: &'static str) -> Result<f64> {
    if q.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(q.len() as f64)
    }
}

/// `-(1/N_o) sum log q_j`
pub fn loss_recall_occ(q_occ: &[f64]) -> Result<f64> {
    let n = nonempty(q_occ, "q_occ")?;
    Ok(-q_occ.iter().map(|q| q.ln()).sum::<f64>() / n)
}

pub fn grad_recall_occ(q_occ: &[f64]) -> Vec<f64> {
    let n = q_occ.len() as f64;
    q_occ.iter().map(|q| -1.0 / (n * q)).collect()
}

/// `(1/N_f) sum log q_i`
pub fn loss_recall_face(q_face: &[f64]) -> Result<f64> {
    let n = nonempty(q_face, "q_face")?;
    Ok(q_face.iter().map(|q| q.ln()).sum::<f64>() / n)
}

pub fn grad_recall_face(q_face: &[f64]) -> Vec<f64> {
    let n = q_face.len() as f64;
    q_face.iter().map(|q| 1.0 / (n * q)).collect()
}

/// `(1/N_f) sum sigmoid(alpha (q_i - 0.5))`
pub fn loss_face_penalty(q_face: &[f64], alpha: f64) -> Result<f64> {
    let n = nonempty(q_face, "q_face")?;
    Ok(q_face.iter().map(|q| sigmoid(alpha * (q - 0.5))).sum::<f64>() / n)
}

pub fn grad_face_penalty(q_face: &[f64], alpha: f64) -> Vec<f64> {
    let n = q_face.len() as f64;
    q_face
        .iter()
        .map(|q| {
            let s = sigmoid(alpha * (q - 0.5));
            alpha * s * (1.0 - s) / n
        })
        .collect()
}

/// Face recall plus occlusion recall plus `lambda` times the face penalty,
/// restricted to the enabled terms.
pub fn loss_total_terms(q_occ: &[f64], q_face: &[f64], w: &LossWeights, terms: &LossTerms) -> Result<f64> {
    let mut total = 0.0;
    if terms.recall_face {
        total += loss_recall_face(q_face)?;
    }
    if terms.recall_occ {
        total += loss_recall_occ(q_occ)?;
    }
    if terms.face_penalty {
        total += w.lambda * loss_face_penalty(q_face, w.alpha)?;
    }
    Ok(total)
}

pub fn loss_total(q_occ: &[f64], q_face: &[f64], w: &LossWeights) -> Result<f64> {
    nonempty(q_occ, "q_occ")?;
    nonempty(q_face, "q_face")?;
    loss_total_terms(q_occ, q_face, w, &LossTerms::default())
}

/// `(dL/dq_occ, dL/dq_face)` of [`loss_total_terms`].
pub fn grad_total_terms(q_occ: &[f64], q_face: &[f64], w: &LossWeights, terms: &LossTerms) -> (Vec<f64>, Vec<f64>) {
    let mut g_occ = vec![0.0; q_occ.len()];
    let mut g_face = vec![0.0; q_face.len()];
    if terms.recall_occ && !q_occ.is_empty() {
        g_occ = grad_recall_occ(q_occ);
    }
    if terms.recall_face && !q_face.is_empty() {
        for (g, d) in g_face.iter_mut().zip(grad_recall_face(q_face)) {
            *g += d;
        }
    }
    if terms.face_penalty && !q_face.is_empty() {
        for (g, d) in g_face.iter_mut().zip(grad_face_penalty(q_face, w.alpha)) {
            *g += w.lambda * d;
        }
    }
    (g_occ, g_face)
}

pub fn grad_total(q_occ: &[f64], q_face: &[f64], w: &LossWeights) -> (Vec<f64>, Vec<f64>) {
    grad_total_terms(q_occ, q_face, w, &LossTerms::default())
}

/// Largest relative error between `analytic` and central differences of `f` at `q`.
/// The denominator is floored at `1e-8` so exact zeros compare absolutely.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, analytic: &[f64], q: &[f64], step: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut x = q.to_vec();
    for i in 0..q.len() {
        x[i] = q[i] + step;
        let plus = f(&x);
        x[i] = q[i] - step;
        let minus = f(&x);
        x[i] = q[i];
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::Label;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert!(loss_recall_occ(&[1.0 - 1e-6]).unwrap() <= 1e-5);
        assert_abs_diff_eq!(loss_recall_occ(&[0.5, 0.5]).unwrap(), 0.6931472, epsilon = 1e-7);
        assert_abs_diff_eq!(loss_recall_occ(&[1e-6]).unwrap(), 13.8155106, epsilon = 1e-7);
        assert_abs_diff_eq!(loss_recall_face(&[0.3678794]).unwrap(), -0.9999999, epsilon = 1e-6);
        assert_abs_diff_eq!(loss_recall_face(&[1e-6]).unwrap(), -13.8155106, epsilon = 1e-7);
        assert_abs_diff_eq!(loss_face_penalty(&[0.5], 10.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(loss_face_penalty(&[1.0], 10.0).unwrap(), 0.9933071, epsilon = 1e-7);
        assert_abs_diff_eq!(loss_face_penalty(&[0.0], 10.0).unwrap(), 0.0066929, epsilon = 1e-7);
        let w = LossWeights::default();
        assert_abs_diff_eq!(loss_total(&[0.5, 0.5], &[0.5], &w).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_total(&[1.0 - 1e-6], &[1e-6], &w).unwrap(), -13.8122, epsilon = 1e-4);
    }

    #[test]
    fn lambda_zero_drops_penalty() {
        let w = LossWeights {
            lambda: 0.0,
            ..LossWeights::default()
        };
        let (qo, qf) = ([0.3, 0.8], [0.2, 0.6, 0.9]);
        let expected = loss_recall_face(&qf).unwrap() + loss_recall_occ(&qo).unwrap();
        assert_eq!(loss_total(&qo, &qf, &w).unwrap(), expected);
    }

    #[test]
    fn closed_form_gradients() {
        assert_eq!(grad_recall_occ(&[0.5]), vec![-2.0]);
        assert_abs_diff_eq!(grad_face_penalty(&[0.5], 10.0)[0], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(loss_recall_occ(&[]).is_err());
        assert!(loss_recall_face(&[]).is_err());
        assert!(loss_face_penalty(&[], 10.0).is_err());
        assert!(loss_total(&[], &[0.5], &LossWeights::default()).is_err());
    }

    fn prompts(occ: &[(usize, usize)], face: &[(usize, usize)]) -> PromptSet {
        PromptSet {
            occlusion: occ.iter().map(|&(r, c)| PointPrompt::new(r, c, 2, Label::Positive)).collect(),
            non_occlusion: face.iter().map(|&(r, c)| PointPrompt::new(r, c, 2, Label::Negative)).collect(),
        }
    }

    #[test]
    fn sampling_rules() {
        let tok = ProbabilityMap::new(2, 2, Resolution::Token { stride: 2 }, vec![0.1, 0.9, 0.3, 1.0]).unwrap();
        let q = sample_probabilities(&tok, &prompts(&[(0, 1), (1, 1)], &[(1, 0)]), DEFAULT_EPS).unwrap();
        assert_eq!(q.q_occ, vec![0.9, 1.0 - 1e-6]);
        assert_eq!(q.q_face, vec![0.3]);

        // image resolution: cell (1, 0) with stride 2 has centre pixel (3, 1)
        let mut v = vec![0.5; 16];
        v[3 * 4 + 1] = 0.25;
        let img = ProbabilityMap::new(4, 4, Resolution::Image, v).unwrap();
        let q = sample_probabilities(&img, &prompts(&[], &[(1, 0)]), DEFAULT_EPS).unwrap();
        assert_eq!(q.q_face, vec![0.25]);

        assert!(matches!(
            sample_probabilities(&tok, &prompts(&[(2, 0)], &[]), DEFAULT_EPS),
            Err(Error::OutOfBounds { .. })
        ));
    }

    proptest! {
        #[test]
        fn signs_and_monotonicity(q in proptest::collection::vec(DEFAULT_EPS..1.0 - DEFAULT_EPS, 1..20), i in 0usize..20, bump in 1e-4f64..0.1) {
            prop_assert!(loss_recall_occ(&q).unwrap() >= 0.0);
            prop_assert!(loss_recall_face(&q).unwrap() <= 0.0);
            let i = i % q.len();
            let mut up = q.clone();
            up[i] = (up[i] + bump).min(1.0 - DEFAULT_EPS);
            if up[i] > q[i] {
                prop_assert!(loss_face_penalty(&up, 10.0).unwrap() > loss_face_penalty(&q, 10.0).unwrap());
                prop_assert!(loss_recall_occ(&up).unwrap() < loss_recall_occ(&q).unwrap());
            }
            let mut rev = q.clone();
            rev.reverse();
            prop_assert!((loss_face_penalty(&rev, 10.0).unwrap() - loss_face_penalty(&q, 10.0).unwrap()).abs() < 1e-12);
            prop_assert!((loss_recall_occ(&rev).unwrap() - loss_recall_occ(&q).unwrap()).abs() < 1e-12);
        }
    }
}
