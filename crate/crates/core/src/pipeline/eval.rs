use crate::dataset::BinaryMask;
use crate::error::{Error, Result};

/// `|pred & gt| / |pred | gt|`, with two empty masks scoring 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            what: "predicted vs ground-truth mask",
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean IoU over paired masks.
pub fn evaluate(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction count vs ground-truth count",
            expected: (gts.len(), 1),
            found: (preds.len(), 1),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += iou(p, g)?;
    }
    Ok(sum / preds.len() as f64)
}
