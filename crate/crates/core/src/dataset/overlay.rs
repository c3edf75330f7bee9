use std::path::Path;

use super::io::write_rgb;
use super::types::{BinaryMask, RgbImage};
use crate::error::{Error, Result};

/// Tint colour for occlusion pixels.
pub const OVERLAY_TINT: [f64; 3] = [0.0, 1.0, 0.0];
const OVERLAY_ALPHA: f64 = 0.5;

/// Blends masked pixels halfway toward green; unmasked pixels are untouched.
pub fn overlay(image: &RgbImage, mask: &BinaryMask) -> Result<RgbImage> {
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            what: "overlay mask vs image",
            expected: image.dims(),
            found: mask.dims(),
        });
    }
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(y, x) {
                let p = image.get(y, x);
                let t = OVERLAY_TINT;
                out.set(
                    y,
                    x,
                    [
                        p[0] * (1.0 - OVERLAY_ALPHA) + t[0] * OVERLAY_ALPHA,
                        p[1] * (1.0 - OVERLAY_ALPHA) + t[1] * OVERLAY_ALPHA,
                        p[2] * (1.0 - OVERLAY_ALPHA) + t[2] * OVERLAY_ALPHA,
                    ],
                );
            }
        }
    }
    out.quantize();
    Ok(out)
}

pub fn write_overlay(image: &RgbImage, mask: &BinaryMask, path: &Path) -> Result<()> {
    write_rgb(path, &overlay(image, mask)?)
}
