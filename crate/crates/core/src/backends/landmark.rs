use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{BinaryMask, RgbImage};
use crate::error::{Error, Result};

/// Averaged face-landmark detection confidence inside a region.
pub trait LandmarkScorer {
    fn confidence(&self, image: &RgbImage, region: &BinaryMask) -> Result<f64>;
}

fn check_region(image: &RgbImage, region: &BinaryMask) -> Result<()> {
    if image.dims() != region.dims() {
        return Err(Error::DimensionMismatch {
            what: "landmark region vs image",
            expected: image.dims(),
            found: region.dims(),
        });
    }
    if region.is_empty() {
        return Err(Error::Empty("landmark region"));
    }
    Ok(())
}

/// Stub scorer returning a configured constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantLandmark(pub f64);

impl LandmarkScorer for ConstantLandmark {
    fn confidence(&self, image: &RgbImage, region: &BinaryMask) -> Result<f64> {
        check_region(image, region)?;
        Ok(self.0)
    }
}

/// Stub scorer reading a single number written by an external detector.
#[derive(Clone, Debug, PartialEq)]
pub struct FileLandmark {
    pub path: PathBuf,
}

impl LandmarkScorer for FileLandmark {
    fn confidence(&self, image: &RgbImage, region: &BinaryMask) -> Result<f64> {
        check_region(image, region)?;
        let text = fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let v: f64 = text.trim().parse().map_err(|e| Error::Parse {
            path: self.path.clone(),
            message: format!("{e}"),
        })?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Backend(format!("landmark confidence {v} outside [0, 1]")));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LandmarkBackend {
    Stub { value: f64 },
    File { path: PathBuf },
}

impl Default for LandmarkBackend {
    fn default() -> Self {
        LandmarkBackend::Stub { value: 0.81 }
    }
}

impl LandmarkBackend {
    pub fn scorer(&self) -> Box<dyn LandmarkScorer> {
        match self {
            LandmarkBackend::Stub { value } => Box::new(ConstantLandmark(*value)),
            LandmarkBackend::File { path } => Box::new(FileLandmark { path: path.clone() }),
        }
    }
}

/// Inputs of the reference quality score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityInputs {
    landmark_conf_occ: f64,
    ssim_nonocc: f64,
}

impl QualityInputs {
    pub fn new(landmark_conf_occ: f64, ssim_nonocc: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&landmark_conf_occ) {
            return Err(Error::Config(format!(
                "landmark confidence {landmark_conf_occ} outside [0, 1]"
            )));
        }
        if !(-1.0..=1.0).contains(&ssim_nonocc) {
            return Err(Error::Config(format!("ssim {ssim_nonocc} outside [-1, 1]")));
        }
        Ok(Self {
            landmark_conf_occ,
            ssim_nonocc,
        })
    }

    pub fn landmark_conf_occ(&self) -> f64 {
        self.landmark_conf_occ
    }

    pub fn ssim_nonocc(&self) -> f64 {
        self.ssim_nonocc
    }
}
