use crate::error::{Error, Result};
use crate::roialign::RoiBox;

/// Largest log-scale delta applied when decoding, so exp() cannot explode.
const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// `(dy, dx, log dh, log dw)` box deltas relative to a reference box,
/// each multiplied by a fixed weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCoder {
    pub weights: [f64; 4],
}

impl BoxCoder {
    pub const RPN: Self = Self { weights: [1.0; 4] };
    pub const HEAD: Self = Self { weights: [10.0, 10.0, 5.0, 5.0] };

    pub fn encode(&self, reference: &RoiBox, target: &RoiBox) -> Result<[f64; 4]> {
        check_extent(reference)?;
        check_extent(target)?;
        let (ry, rx) = reference.center();
        let (ty, tx) = target.center();
        let [wy, wx, wh, ww] = self.weights;
        Ok([
            wy * (ty - ry) / reference.height(),
            wx * (tx - rx) / reference.width(),
            wh * (target.height() / reference.height()).ln(),
            ww * (target.width() / reference.width()).ln(),
        ])
    }

    /// Applies deltas to `reference`; the result is clipped to the unit square
    /// and may have zero extent when it falls outside the image.
    pub fn decode(&self, reference: &RoiBox, deltas: [f64; 4]) -> Result<RoiBox> {
        check_extent(reference)?;
        let [wy, wx, wh, ww] = self.weights;
        let (ry, rx) = reference.center();
        let cy = ry + deltas[0] / wy * reference.height();
        let cx = rx + deltas[1] / wx * reference.width();
        let h = reference.height() * (deltas[2] / wh).min(MAX_LOG_SCALE).exp();
        let w = reference.width() * (deltas[3] / ww).min(MAX_LOG_SCALE).exp();
        Ok(RoiBox {
            y1: cy - 0.5 * h,
            x1: cx - 0.5 * w,
            y2: cy + 0.5 * h,
            x2: cx + 0.5 * w,
        }
        .clipped())
    }
}

fn check_extent(b: &RoiBox) -> Result<()> {
    if b.height() > 0.0 && b.width() > 0.0 && b.height().is_finite() && b.width().is_finite() {
        Ok(())
    } else {
        Err(Error::Degenerate(format!("box with non-positive extent {b:?}")))
    }
}

pub fn encode_boxes(coder: &BoxCoder, references: &[RoiBox], targets: &[RoiBox]) -> Result<Vec<[f64; 4]>> {
    if references.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} reference boxes but {} targets",
            references.len(),
            targets.len()
        )));
    }
    references.iter().zip(targets).map(|(r, t)| coder.encode(r, t)).collect()
}

pub fn decode_boxes(coder: &BoxCoder, references: &[RoiBox], deltas: &[[f64; 4]]) -> Result<Vec<RoiBox>> {
    if references.len() != deltas.len() {
        return Err(Error::dim(format!(
            "{} reference boxes but {} deltas",
            references.len(),
            deltas.len()
        )));
    }
    references.iter().zip(deltas).map(|(r, d)| coder.decode(r, *d)).collect()
}

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (ties: lower index first); a box is dropped when its IoU with an already
/// kept box exceeds `iou_threshold`. Returns kept indices in visiting order.
pub fn nms(boxes: &[RoiBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    let n = boxes.len().min(scores.len());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| boxes[k].iou(&boxes[i]) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}
