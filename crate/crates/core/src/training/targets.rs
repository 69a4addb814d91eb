use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::mask::BinaryMask;
use crate::roialign::{roi_align_tensor, RoiBox};
use crate::tensor::Tensor;

/// Training label of one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Index of the box in `gt` with the highest IoU against `b` (lowest index on
/// ties) and that IoU; `None` when `gt` is empty.
pub fn best_match(b: &RoiBox, gt: &[RoiBox]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in gt.iter().enumerate() {
        let iou = b.iou(g);
        if best.is_none_or(|(_, v)| iou > v) {
            best = Some((j, iou));
        }
    }
    best
}

/// IoU >= `pos` is positive, IoU <= `neg` negative, anything between ignored.
/// Each ground-truth box also claims its best anchor (lowest anchor index on
/// ties; lowest gt index when two boxes claim the same anchor), provided the
/// overlap is nonzero.
pub fn assign_targets(anchors: &[RoiBox], gt: &[RoiBox], pos: f64, neg: f64) -> Vec<AnchorLabel> {
    let mut labels: Vec<AnchorLabel> = anchors
        .iter()
        .map(|a| match best_match(a, gt) {
            Some((j, iou)) if iou >= pos => AnchorLabel::Positive(j),
            Some((_, iou)) if iou > neg => AnchorLabel::Ignore,
            _ => AnchorLabel::Negative,
        })
        .collect();
    for (j, g) in gt.iter().enumerate().rev() {
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in anchors.iter().enumerate() {
            let iou = a.iou(g);
            if best.is_none_or(|(_, v)| iou > v) {
                best = Some((i, iou));
            }
        }
        if let Some((i, iou)) = best {
            if iou > 0.0 {
                labels[i] = AnchorLabel::Positive(j);
            }
        }
    }
    labels
}

/// Random subset of labelled anchors: up to half `total` positives, the rest
/// negatives. Returns `(anchor index, matched gt or None)` sorted by index.
pub fn sample_anchors<R: Rng + ?Sized>(labels: &[AnchorLabel], total: usize, rng: &mut R) -> Vec<(usize, Option<usize>)> {
    let mut pos: Vec<(usize, Option<usize>)> = Vec::new();
    let mut neg: Vec<(usize, Option<usize>)> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            AnchorLabel::Positive(j) => pos.push((i, Some(*j))),
            AnchorLabel::Negative => neg.push((i, None)),
            AnchorLabel::Ignore => {}
        }
    }
    pos.shuffle(rng);
    pos.truncate(total / 2);
    neg.shuffle(rng);
    neg.truncate(total - pos.len());
    let mut out = pos;
    out.extend(neg);
    out.sort_unstable();
    out
}

/// A ROI picked for the second stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledRoi {
    pub roi: RoiBox,
    /// Detector class, 0 for background.
    pub class: usize,
    /// Matched ground-truth index for foreground ROIs.
    pub gt: Option<usize>,
}

/// Labels `candidates` against the ground truth (IoU >= `fg_iou` is
/// foreground) and draws up to `total` of them, at most `fg_fraction`
/// foreground. Foreground ROIs come first.
pub fn sample_rois<R: Rng + ?Sized>(
    candidates: &[RoiBox],
    gt: &[RoiBox],
    gt_classes: &[usize],
    total: usize,
    fg_fraction: f64,
    fg_iou: f64,
    rng: &mut R,
) -> Vec<SampledRoi> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for roi in candidates {
        match best_match(roi, gt) {
            Some((j, iou)) if iou >= fg_iou => fg.push(SampledRoi {
                roi: *roi,
                class: gt_classes[j],
                gt: Some(j),
            }),
            _ => bg.push(SampledRoi {
                roi: *roi,
                class: 0,
                gt: None,
            }),
        }
    }
    fg.shuffle(rng);
    fg.truncate((total as f64 * fg_fraction).floor() as usize);
    bg.shuffle(rng);
    bg.truncate(total - fg.len());
    fg.extend(bg);
    fg
}

/// The gt mask cropped to `roi` and resampled to `side x side` by bilinear
/// interpolation at bin centers, thresholded at 0.5.
pub fn mask_target(mask: &BinaryMask, roi: &RoiBox, side: usize) -> Result<Tensor> {
    let [w, h, _] = mask.dims();
    let plane = Tensor::new([1, h, w], mask.data().iter().map(|&b| b as u8 as f64).collect())?;
    let t = roi_align_tensor(&plane, roi, side, 1)?;
    t.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).reshape(&[side, side])
}
