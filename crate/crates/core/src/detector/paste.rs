use super::network::sigmoid;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::roialign::{axis_taps, RoiBox};
use crate::tensor::Tensor;

/// Pastes `[S, S]` mask logits into an `image_size` square image.
///
/// Pixels whose centers fall inside `roi` take the bilinear interpolation of
/// `sigmoid(logits)` stretched over the box (same half-pixel convention as
/// ROIAlign) and are set when it reaches 0.5; all other pixels stay unset.
pub fn paste_mask(logits: &Tensor, roi: &RoiBox, image_size: usize) -> Result<BinaryMask> {
    let [s, s2] = logits.shape()[..] else {
        return Err(Error::dim(format!("mask logits must be [S,S], got {:?}", logits.shape())));
    };
    if s != s2 || s == 0 {
        return Err(Error::dim(format!("mask logits must be square, got {:?}", logits.shape())));
    }
    if !roi.is_valid() {
        return Err(Error::Degenerate(format!("cannot paste into box {roi:?}")));
    }
    let prob: Vec<f64> = logits.data().iter().map(|&z| sigmoid(z)).collect();
    let n = image_size as f64;
    let mut mask = BinaryMask::image(image_size, image_size);
    for py in 0..image_size {
        let cy = (py as f64 + 0.5) / n;
        if cy < roi.y1 || cy >= roi.y2 {
            continue;
        }
        let ty = axis_taps((cy - roi.y1) / roi.height() * s as f64, s);
        for px in 0..image_size {
            let cx = (px as f64 + 0.5) / n;
            if cx < roi.x1 || cx >= roi.x2 {
                continue;
            }
            let tx = axis_taps((cx - roi.x1) / roi.width() * s as f64, s);
            let mut v = 0.0;
            for &(iy, wy) in &ty {
                for &(ix, wx) in &tx {
                    v += wy * wx * prob[iy * s + ix];
                }
            }
            if v >= 0.5 {
                mask.set(px, py, 0, true);
            }
        }
    }
    Ok(mask)
}
