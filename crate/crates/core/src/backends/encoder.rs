use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::arrayfile::ArrayFile;
use super::grid::TokenGrid;
use crate::dataset::RgbImage;
use crate::error::{Error, Result};
use crate::seeding::{gaussian_matrix, gaussian_vector, rng, STREAM_ENCODER};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub dim: usize,
    pub seed: u64,
    pub backend: BackendKind,
    /// Directory holding `<sample_id>.feat` / `<sample_id>.ref.feat` for the external backend.
    pub feature_dir: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            dim: 64,
            seed: 0,
            backend: BackendKind::Toy,
            feature_dir: None,
        }
    }
}

/// Which of the two contrasted images is being encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageRole {
    Input,
    Reference,
}

/// Per-patch encoder: flattened `patch x patch x 3` pixels, centred on 0.5,
/// times a seeded projection, plus a seeded bias shared by all tokens.
/// Centring keeps flat colours of different brightness apart in angle. There is no mixing
/// across patches, so changing one patch changes exactly one token.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    patch: usize,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl ToyEncoder {
    pub const BIAS_STD: f64 = 0.05;

    pub fn new(patch_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 || dim == 0 {
            return Err(Error::Config("patch_size and dim must be positive".into()));
        }
        let fan_in = patch_size * patch_size * 3;
        let mut r = rng(seed, STREAM_ENCODER);
        let weight = gaussian_matrix(&mut r, fan_in, dim, 1.0 / (fan_in as f64).sqrt());
        let bias = gaussian_vector(&mut r, dim, Self::BIAS_STD);
        Ok(Self {
            patch: patch_size,
            weight,
            bias,
        })
    }

    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        Self::new(cfg.patch_size, cfg.dim, cfg.seed)
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    /// Grid extent for an image: `ceil(size / patch)` in each direction.
    pub fn grid_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.patch), width.div_ceil(self.patch))
    }

    /// Flattened centred patches, edge-replicated past the image border.
    pub fn patches(&self, image: &RgbImage) -> Array2<f64> {
        let p = self.patch;
        let (gh, gw) = self.grid_dims(image.height(), image.width());
        let mut out = Array2::zeros((gh * gw, p * p * 3));
        for r in 0..gh {
            for c in 0..gw {
                let mut row = out.row_mut(r * gw + c);
                let mut k = 0;
                for dy in 0..p {
                    let y = (r * p + dy).min(image.height() - 1);
                    for dx in 0..p {
                        let x = (c * p + dx).min(image.width() - 1);
                        for v in image.get(y, x) {
                            row[k] = v - 0.5;
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn encode(&self, image: &RgbImage) -> Result<TokenGrid> {
        let (gh, gw) = self.grid_dims(image.height(), image.width());
        let tokens = self.patches(image).dot(&self.weight) + &self.bias;
        TokenGrid::new(gh, gw, self.patch, tokens)
    }
}

/// Loads precomputed features written in the array exchange format.
#[derive(Clone, Debug)]
pub struct ExternalEncoder {
    dir: PathBuf,
    dim: usize,
}

impl ExternalEncoder {
    pub fn new(dir: impl Into<PathBuf>, dim: usize) -> Self {
        Self {
            dir: dir.into(),
            dim,
        }
    }

    pub fn feature_path(dir: &Path, sample_id: &str, role: ImageRole) -> PathBuf {
        match role {
            ImageRole::Input => dir.join(format!("{sample_id}.feat")),
            ImageRole::Reference => dir.join(format!("{sample_id}.ref.feat")),
        }
    }

    pub fn load(&self, sample_id: &str, role: ImageRole) -> Result<TokenGrid> {
        let path = Self::feature_path(&self.dir, sample_id, role);
        let grid = ArrayFile::read(&path)?.into_token_grid()?;
        if grid.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: grid.dim(),
            });
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Toy(ToyEncoder),
    External(ExternalEncoder),
}

impl Encoder {
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        match cfg.backend {
            BackendKind::Toy => Ok(Encoder::Toy(ToyEncoder::from_config(cfg)?)),
            BackendKind::External => {
                let dir = cfg.feature_dir.clone().ok_or_else(|| {
                    Error::Config("external encoder requires backend.feature_dir".into())
                })?;
                Ok(Encoder::External(ExternalEncoder::new(dir, cfg.dim)))
            }
        }
    }

    pub fn encode(&self, image: &RgbImage, sample_id: &str, role: ImageRole) -> Result<TokenGrid> {
        match self {
            Encoder::Toy(e) => e.encode(image),
            Encoder::External(e) => {
                let grid = e.load(sample_id, role)?;
                let (h, w) = grid.extent();
                let s = grid.stride();
                if h < image.height() || w < image.width() || h >= image.height() + s || w >= image.width() + s {
                    return Err(Error::DimensionMismatch {
                        what: "external feature extent vs image",
                        expected: image.dims(),
                        found: (h, w),
                    });
                }
                Ok(grid)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::arrayfile::DType;

    fn test_image(h: usize, w: usize) -> RgbImage {
        let data = (0..h * w * 3).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        RgbImage::new(h, w, data).unwrap()
    }

    #[test]
    fn shape_follows_patch_arithmetic() {
        let enc = ToyEncoder::new(16, 32, 1).unwrap();
        let g = enc.encode(&test_image(64, 64)).unwrap();
        assert_eq!((g.grid_h(), g.grid_w(), g.dim(), g.stride()), (4, 4, 32, 16));
        let g = ToyEncoder::new(16, 8, 1).unwrap().encode(&test_image(70, 33)).unwrap();
        assert_eq!((g.grid_h(), g.grid_w()), (5, 3));
    }

    #[test]
    fn deterministic_for_same_seed() {
        let img = test_image(32, 32);
        let a = ToyEncoder::new(8, 16, 9).unwrap().encode(&img).unwrap();
        let b = ToyEncoder::new(8, 16, 9).unwrap().encode(&img).unwrap();
        assert_eq!(a, b);
        let c = ToyEncoder::new(8, 16, 10).unwrap().encode(&img).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_patch_change_touches_one_token() {
        let enc = ToyEncoder::new(16, 32, 4).unwrap();
        let a = test_image(64, 64);
        let mut b = a.clone();
        for y in 16..32 {
            for x in 32..48 {
                b.set(y, x, [0.1, 0.9, 0.3]);
            }
        }
        let (ga, gb) = (enc.encode(&a).unwrap(), enc.encode(&b).unwrap());
        for r in 0..4 {
            for c in 0..4 {
                let same = ga.token(r, c) == gb.token(r, c);
                assert_eq!(same, (r, c) != (1, 2), "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn external_features_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let img = test_image(64, 64);
        let grid = ToyEncoder::new(16, 8, 2).unwrap().encode(&img).unwrap();
        ArrayFile::from(&grid)
            .write(&dir.path().join("s1.feat"), DType::F64)
            .unwrap();
        let ok = Encoder::External(ExternalEncoder::new(dir.path(), 8));
        assert_eq!(ok.encode(&img, "s1", ImageRole::Input).unwrap(), grid);
        let wrong_dim = Encoder::External(ExternalEncoder::new(dir.path(), 16));
        assert!(matches!(
            wrong_dim.encode(&img, "s1", ImageRole::Input),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            ok.encode(&img, "s1", ImageRole::Reference),
            Err(Error::MissingFile(_))
        ));
        std::fs::write(dir.path().join("s2.feat"), b"OCAR\x01\x02").unwrap();
        assert!(matches!(
            ok.encode(&img, "s2", ImageRole::Input),
            Err(Error::MalformedFeatures { .. })
        ));
    }
}
