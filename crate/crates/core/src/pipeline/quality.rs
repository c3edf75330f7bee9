use serde::{Deserialize, Serialize};

use crate::backends::{LandmarkScorer, QualityInputs};
use crate::dataset::{BinaryMask, RgbImage};
use crate::error::{Error, Result};

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
/// Stabilising constants for an 8-bit dynamic range.
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_kernel() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with zero padding.
fn blur(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as i64 + i as i64 - r;
                if (0..w as i64).contains(&xx) {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as i64 + i as i64 - r;
                if (0..h as i64).contains(&yy) {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over `region` on luma scaled to [0, 255].
///
/// Window statistics are Gaussian-weighted and renormalised over the pixels
/// of `region` only, so content outside it never leaks in.
pub fn ssim_in_region(a: &RgbImage, b: &RgbImage, region: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            what: "ssim images",
            expected: a.dims(),
            found: b.dims(),
        });
    }
    if region.dims() != a.dims() {
        return Err(Error::DimensionMismatch {
            what: "ssim region vs image",
            expected: a.dims(),
            found: region.dims(),
        });
    }
    if region.is_empty() {
        return Err(Error::Empty("ssim region"));
    }
    let (h, w) = a.dims();
    let k = gaussian_kernel();
    let m: Vec<f64> = region.as_slice().iter().map(|&v| f64::from(u8::from(v))).collect();
    let la = a.luma_255();
    let lb = b.luma_255();
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(|i| m[i] * f(i)).collect::<Vec<f64>>();
    let wsum = blur(&m, h, w, &k);
    let sa = blur(&prod(&|i| la[i]), h, w, &k);
    let sb = blur(&prod(&|i| lb[i]), h, w, &k);
    let saa = blur(&prod(&|i| la[i] * la[i]), h, w, &k);
    let sbb = blur(&prod(&|i| lb[i] * lb[i]), h, w, &k);
    let sab = blur(&prod(&|i| la[i] * lb[i]), h, w, &k);

    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..h * w {
        if m[i] == 0.0 {
            continue;
        }
        let ws = wsum[i];
        let (mu_a, mu_b) = (sa[i] / ws, sb[i] / ws);
        let var_a = (saa[i] / ws - mu_a * mu_a).max(0.0);
        let var_b = (sbb[i] / ws - mu_b * mu_b).max(0.0);
        let cov = sab[i] / ws - mu_a * mu_b;
        let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
        n += 1;
    }
    Ok(total / n as f64)
}

/// Mean of the two quality inputs.
pub fn quality_score(inputs: QualityInputs) -> f64 {
    (inputs.ssim_nonocc() + inputs.landmark_conf_occ()) / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub ssim_nonocc: f64,
    /// Landmark confidence of the reference inside the occluded region.
    pub landmark_conf_occ: f64,
    /// Same measurement on the occluded input, for comparison.
    pub landmark_conf_raw: Option<f64>,
    pub score: f64,
}

impl QualityReport {
    pub fn from_inputs(inputs: QualityInputs, landmark_conf_raw: Option<f64>) -> Self {
        Self {
            ssim_nonocc: inputs.ssim_nonocc(),
            landmark_conf_occ: inputs.landmark_conf_occ(),
            landmark_conf_raw,
            score: quality_score(inputs),
        }
    }

    /// Gain in landmark confidence of the reference over the raw input.
    pub fn confidence_gain(&self) -> Option<f64> {
        self.landmark_conf_raw.map(|raw| self.landmark_conf_occ - raw)
    }
}

/// Scores a reference against the original: SSIM outside the occlusion and
/// landmark confidence inside it.
pub fn assess_reference(
    reference: &RgbImage,
    original: &RgbImage,
    occlusion: &BinaryMask,
    scorer: &dyn LandmarkScorer,
    raw_scorer: Option<&dyn LandmarkScorer>,
) -> Result<QualityReport> {
    let ssim = ssim_in_region(reference, original, &occlusion.not())?;
    let conf = scorer.confidence(reference, occlusion)?;
    let raw = raw_scorer.map(|s| s.confidence(original, occlusion)).transpose()?;
    Ok(QualityReport::from_inputs(QualityInputs::new(conf, ssim)?, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ConstantLandmark;
    use proptest::prelude::*;

    fn noise_image(h: usize, w: usize, seed: u64) -> RgbImage {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..h * w * 3)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) % 256) as f64 / 255.0
            })
            .collect();
        RgbImage::new(h, w, data).unwrap()
    }

    #[test]
    fn kernel_is_normalised() {
        let k = gaussian_kernel();
        assert_eq!(k.len(), 2 * SSIM_RADIUS + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_images_score_one() {
        let a = noise_image(20, 24, 3);
        let region = BinaryMask::full(20, 24);
        assert_eq!(ssim_in_region(&a, &a, &region).unwrap(), 1.0);
    }

    #[test]
    fn content_outside_region_is_ignored() {
        let a = noise_image(16, 16, 1);
        let mut b = a.clone();
        let mut region = BinaryMask::full(16, 16);
        for y in 4..10 {
            for x in 4..10 {
                region.set(y, x, false);
                b.set(y, x, [1.0, 0.0, 0.0]);
            }
        }
        assert_eq!(ssim_in_region(&a, &b, &region).unwrap(), 1.0);
        assert!(ssim_in_region(&a, &b, &BinaryMask::full(16, 16)).unwrap() < 1.0);
    }

    #[test]
    fn flat_images_match_closed_form() {
        // constant windows: ssim reduces to the luminance term
        let a = RgbImage::filled(12, 12, [0.2; 3]);
        let b = RgbImage::filled(12, 12, [0.6; 3]);
        let (ma, mb) = (0.2 * 255.0, 0.6 * 255.0);
        let want = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        let got = ssim_in_region(&a, &b, &BinaryMask::full(12, 12)).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn empty_region_is_an_error() {
        let a = noise_image(8, 8, 0);
        assert!(matches!(
            ssim_in_region(&a, &a, &BinaryMask::empty(8, 8)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn report_shows_confidence_gain() {
        let img = noise_image(16, 16, 5);
        let mut occ = BinaryMask::empty(16, 16);
        occ.set(3, 3, true);
        let r = assess_reference(&img, &img, &occ, &ConstantLandmark(0.81), Some(&ConstantLandmark(0.59))).unwrap();
        assert_eq!(r.ssim_nonocc, 1.0);
        assert_eq!(r.score, (1.0 + 0.81) / 2.0);
        assert!((r.confidence_gain().unwrap() - 0.22).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = noise_image(10, 10, s1);
            let b = noise_image(10, 10, s2);
            let r = BinaryMask::full(10, 10);
            let ab = ssim_in_region(&a, &b, &r).unwrap();
            let ba = ssim_in_region(&b, &a, &r).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
        }
    }
}
