use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Intersection over union of two masks on the same grid; 0 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_grid(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Single-threshold average precision over scored mask detections.
///
/// Detections are visited by descending score (stable for ties) and each is
/// greedily matched to the unmatched ground-truth instance of highest IoU,
/// provided that IoU reaches `iou_threshold`. The result is the area under
/// the precision-recall curve after making precision monotone from the right.
pub fn average_precision(detections: &[(f64, &BinaryMask)], gts: &[&BinaryMask], iou_threshold: f64) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::Undefined("no ground-truth instances".into()));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| detections[j].0.total_cmp(&detections[i].0));

    let mut matched = vec![false; gts.len()];
    let mut tp_flags = Vec::with_capacity(order.len());
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] {
                continue;
            }
            let iou = mask_iou(detections[d].1, gt)?;
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
        }
        tp_flags.push(best.is_some());
    }

    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(ap)
}
