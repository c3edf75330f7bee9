use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_rgb, ParsingMask, RgbImage, Sample};
use crate::error::{Error, Result};

/// Source of the occlusion-free reference face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
#[derive(Default)]
pub enum ReferenceMode {
    /// The clean face stored with the sample (synthetic suite, or a manifest `reference_path`).
    #[default]
    Synthetic,
    /// Generator output stored as `<dir>/<sample_id>.ref.png`.
    External { dir: PathBuf },
}


pub fn external_reference_path(dir: &std::path::Path, sample_id: &str) -> PathBuf {
    dir.join(format!("{sample_id}.ref.png"))
}

/// Returns a reference aligned with `image`. The parsing mask is what a
/// mask-conditioned generator would consume; the adapters here only check it
/// against the image extent.
pub fn provide_reference(
    sample_id: &str,
    image: &RgbImage,
    parsing: &ParsingMask,
    stored: Option<&RgbImage>,
    mode: &ReferenceMode,
) -> Result<RgbImage> {
    if parsing.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            what: "parsing mask vs image",
            expected: image.dims(),
            found: parsing.dims(),
        });
    }
    let reference = match mode {
        ReferenceMode::Synthetic => stored
            .cloned()
            .ok_or_else(|| Error::Backend(format!("sample {sample_id} has no stored reference")))?,
        ReferenceMode::External { dir } => read_rgb(&external_reference_path(dir, sample_id))?,
    };
    if reference.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            what: "reference vs image",
            expected: image.dims(),
            found: reference.dims(),
        });
    }
    Ok(reference)
}

pub fn reference_for(sample: &Sample, mode: &ReferenceMode) -> Result<RgbImage> {
    provide_reference(
        &sample.id,
        &sample.image,
        &sample.parsing,
        sample.reference.as_ref(),
        mode,
    )
}
