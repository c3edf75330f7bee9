use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendKind, EncoderConfig, LandmarkBackend, ReferenceMode};
use crate::contrast::FeConfig;
use crate::error::{Error, Result};
use crate::objectives::LossConfig;
use crate::selection::{ScreenConfig, Strategy};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Toy,
    /// Probability maps precomputed as `<decoder_dir>/<sample_id>.prob.bin`.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub encoder: BackendKind,
    pub patch_size: usize,
    pub feature_dir: Option<PathBuf>,
    pub decoder: DecoderKind,
    pub decoder_dir: Option<PathBuf>,
    pub reference: ReferenceMode,
    pub landmark: LandmarkBackend,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            encoder: BackendKind::Toy,
            patch_size: 4,
            feature_dir: None,
            decoder: DecoderKind::Toy,
            decoder_dir: None,
            reference: ReferenceMode::Synthetic,
            landmark: LandmarkBackend::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsConfig {
    pub strategy: Strategy,
    /// Cut-off of the fixed-threshold strategy, also the fallback when Otsu degenerates.
    pub threshold: f64,
    /// Intersect the predicted mask with the parsed face region.
    pub restrict_to_face: bool,
    /// Gain of the image token added to each prompt embedding, divided by the
    /// number of prompts carrying the same label. Zero gives purely
    /// positional prompts.
    pub prompt_context: f64,
    pub sa: ScreenConfig,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            threshold: 0.5,
            restrict_to_face: true,
            prompt_context: 4.0,
            sa: ScreenConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Standard,
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Epochs of standard training.
    pub epochs: usize,
    pub batch: usize,
    /// Optimizer steps of per-image training.
    pub steps: usize,
    pub seed: u64,
    /// Also update the two label embeddings of the prompt encoder.
    pub train_label_embeddings: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Standard,
            lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 50,
            batch: 32,
            steps: 200,
            seed: 0,
            train_label_embeddings: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("training.lr must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("training.batch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.weight_decay < 0.0 {
            return Err(Error::Config("training betas must lie in [0, 1) and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendConfig,
    pub fe: FeConfig,
    pub ps: PsConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.fe.validate()?;
        self.loss.weights().validate()?;
        self.training.validate()?;
        if self.backend.patch_size == 0 {
            return Err(Error::Config("backend.patch_size must be >= 1".into()));
        }
        if !self.fe.dim.is_multiple_of(self.ps.sa.heads.max(1)) || self.ps.sa.heads == 0 {
            return Err(Error::Config(format!(
                "fe.dim {} must be divisible by ps.sa.heads {}",
                self.fe.dim, self.ps.sa.heads
            )));
        }
        if !(self.ps.prompt_context >= 0.0 && self.ps.prompt_context.is_finite()) {
            return Err(Error::Config("ps.prompt_context must be finite and non-negative".into()));
        }
        if !(-1.0..=1.0).contains(&self.ps.threshold) {
            return Err(Error::Config("ps.threshold must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    /// Sets every component seed to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.fe.seed = seed;
        self.ps.sa.seed = seed;
        self.training.seed = seed;
        self
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            patch_size: self.backend.patch_size,
            dim: self.fe.dim,
            seed: self.fe.seed,
            backend: self.backend.encoder,
            feature_dir: self.backend.feature_dir.clone(),
        }
    }
}
