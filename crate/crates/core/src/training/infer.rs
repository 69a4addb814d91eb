use crate::autograd::Tape;
use crate::detector::{nms, paste_mask, proposals, AnchorSet, BoxCoder, Checkpoint, Detection, Network};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::roialign::RoiBox;
use crate::seg_metrics::dice;
use crate::tensor::Tensor;

/// Runs the model on one `[1, S, S]` image.
///
/// Every proposal is scored by the class head; each foreground class whose
/// probability exceeds `score_threshold` yields a box refined by that class's
/// deltas. Boxes go through per-class NMS, are sorted by descending score
/// (ties: lower class, then earlier proposal), capped at the configured
/// maximum, and get a mask predicted on the refined box and pasted into the
/// image.
pub fn infer(image: &Tensor, checkpoint: &Checkpoint, score_threshold: f64, nms_threshold: f64) -> Result<Vec<Detection>> {
    let cfg = &checkpoint.config;
    let n = cfg.image_size;
    if image.shape() != [1, n, n] {
        return Err(Error::Config(format!(
            "checkpoint expects [1,{n},{n}] images, got {:?}",
            image.shape()
        )));
    }
    if !(nms_threshold > 0.0 && nms_threshold < 1.0) {
        return Err(Error::arg(format!("nms threshold must lie in (0,1), got {nms_threshold}")));
    }
    let anchors = AnchorSet::for_config(cfg)?;
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, cfg, &checkpoint.params, false);
    let x = tape.constant(image.clone());
    let pyramid = net.backbone(&mut tape, x)?;
    let rpn = net.rpn(&mut tape, &pyramid, &anchors)?;
    let props = proposals(
        cfg,
        &anchors.flat(),
        tape.value(rpn.logits).data(),
        tape.value(rpn.deltas).data(),
    )?;
    if props.is_empty() {
        return Ok(Vec::new());
    }
    let mut feats = Vec::with_capacity(props.len());
    for (b, _) in &props {
        feats.push(net.roi_features(&mut tape, &pyramid, b, false)?.0);
    }
    let (logits, deltas) = net.class_head(&mut tape, &feats)?;
    let probs = tape.softmax(logits, 1)?;
    let k = cfg.num_classes;
    let p = tape.value(probs).data().to_vec();
    let d = tape.value(deltas).data().to_vec();

    // (class, proposal, score, refined box)
    let mut kept: Vec<(usize, usize, f64, RoiBox)> = Vec::new();
    for class in 1..k {
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        let mut origin = Vec::new();
        for (i, (b, _)) in props.iter().enumerate() {
            let score = p[i * k + class];
            if score <= score_threshold {
                continue;
            }
            let o = (i * k + class) * 4;
            let refined = BoxCoder::HEAD.decode(b, [d[o], d[o + 1], d[o + 2], d[o + 3]])?;
            if refined.is_valid() && refined.height() * n as f64 >= 1.0 && refined.width() * n as f64 >= 1.0 {
                boxes.push(refined);
                scores.push(score);
                origin.push(i);
            }
        }
        for j in nms(&boxes, &scores, nms_threshold) {
            kept.push((class, origin[j], scores[j], boxes[j]));
        }
    }
    kept.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    kept.truncate(cfg.max_detections);

    let mut out = Vec::with_capacity(kept.len());
    for (class, _, score, bbox) in kept {
        let (s, l) = net.roi_features(&mut tape, &pyramid, &bbox, true)?;
        let m = net.mask_head(&mut tape, s, l)?;
        let side = tape.shape(m)[1];
        let plane = tape.value(m).data()[class * side * side..(class + 1) * side * side].to_vec();
        let mask_logits = Tensor::new([side, side], plane)?;
        let image_mask = paste_mask(&mask_logits, &bbox, n)?;
        out.push(Detection {
            class_id: class,
            score,
            bbox,
            mask_logits,
            image_mask: Some(image_mask),
        });
    }
    Ok(out)
}

/// Dice of the highest-scoring detection of `class_id` against `truth`;
/// 0 when the class was not detected.
pub fn top_detection_dice(detections: &[Detection], class_id: usize, truth: &BinaryMask) -> Result<f64> {
    match detections.iter().find(|d| d.class_id == class_id) {
        Some(d) => {
            let m = d
                .image_mask
                .as_ref()
                .ok_or_else(|| Error::arg("detection has no pasted mask"))?;
            dice(m, truth)
        }
        None => Ok(0.0),
    }
}
