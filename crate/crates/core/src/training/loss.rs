use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smooth-L1 transition for RPN deltas.
pub const RPN_BETA: f64 = 1.0 / 9.0;
/// Smooth-L1 transition for the class head's weighted deltas.
pub const HEAD_BETA: f64 = 1.0;

/// Loss components and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_bbox: f64,
    pub l_mask: f64,
    pub l_rpn_obj: f64,
    pub l_rpn_box: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Total accumulated in the fixed order cls, bbox, mask, rpn_obj, rpn_box.
    pub fn from_components(l_cls: f64, l_bbox: f64, l_mask: f64, l_rpn_obj: f64, l_rpn_box: f64) -> Self {
        Self {
            l_cls,
            l_bbox,
            l_mask,
            l_rpn_obj,
            l_rpn_box,
            total: l_cls + l_bbox + l_mask + l_rpn_obj + l_rpn_box,
        }
    }

    pub fn component_sum(&self) -> f64 {
        self.l_cls + self.l_bbox + self.l_mask + self.l_rpn_obj + self.l_rpn_box
    }

    pub fn components(&self) -> [f64; 5] {
        [self.l_cls, self.l_bbox, self.l_mask, self.l_rpn_obj, self.l_rpn_box]
    }

    /// Component-wise mean; the total is recomputed from the mean components.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let mut c = [0.0; 5];
        for it in items {
            for (a, b) in c.iter_mut().zip(it.components()) {
                *a += b;
            }
        }
        Self::from_components(c[0] / n, c[1] / n, c[2] / n, c[3] / n, c[4] / n)
    }
}

/// Everything the loss needs from one image's forward pass.
pub struct LossInputs<'a> {
    /// `[N]` anchor objectness logits.
    pub rpn_logits: Var,
    /// `[N, 4]` anchor deltas.
    pub rpn_deltas: Var,
    /// Sampled anchors and their 0/1 objectness targets.
    pub rpn_samples: &'a [(usize, f64)],
    /// Positive anchors and their encoded gt deltas.
    pub rpn_box_targets: &'a [(usize, [f64; 4])],
    /// `[R, K]` class logits of the sampled ROIs.
    pub class_logits: Var,
    pub roi_classes: &'a [usize],
    /// `[R, 4K]` per-class deltas.
    pub box_deltas: Var,
    /// `(row, class, encoded deltas)` of foreground ROIs.
    pub box_targets: &'a [(usize, usize, [f64; 4])],
    /// `([K, S, S] logits, gt class, [S, S] binary target)` per supervised ROI.
    pub masks: &'a [(Var, usize, Tensor)],
}

/// Loss terms recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub cls: Var,
    pub bbox: Var,
    pub mask: Var,
    pub rpn_obj: Var,
    pub rpn_box: Var,
    pub total: Var,
}

impl LossVars {
    /// Sums already recorded components in the fixed order.
    pub fn from_parts(tape: &mut Tape, parts: [Var; 5]) -> Result<Self> {
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = tape.add(total, p)?;
        }
        let [cls, bbox, mask, rpn_obj, rpn_box] = parts;
        Ok(Self { cls, bbox, mask, rpn_obj, rpn_box, total })
    }

    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        LossBreakdown {
            l_cls: v(self.cls),
            l_bbox: v(self.bbox),
            l_mask: v(self.mask),
            l_rpn_obj: v(self.rpn_obj),
            l_rpn_box: v(self.rpn_box),
            total: v(self.total),
        }
    }

    fn parts(&self) -> [Var; 5] {
        [self.cls, self.bbox, self.mask, self.rpn_obj, self.rpn_box]
    }

    /// Component-wise mean over images, summed again on the tape.
    pub fn mean(tape: &mut Tape, items: &[LossVars]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("no per-image losses to average".into()));
        }
        let mut parts = items[0].parts();
        for it in &items[1..] {
            for (acc, p) in parts.iter_mut().zip(it.parts()) {
                *acc = tape.add(*acc, p)?;
            }
        }
        let inv = 1.0 / items.len() as f64;
        for p in parts.iter_mut() {
            *p = tape.scale(*p, inv);
        }
        Self::from_parts(tape, parts)
    }
}

fn rows_tensor(rows: &[[f64; 4]]) -> Result<Tensor> {
    Tensor::new([rows.len(), 4], rows.iter().flatten().copied().collect())
}

/// Classification cross-entropy over sampled ROIs, smooth-L1 on foreground
/// deltas of the gt class, mask BCE on the gt-class channel, and the RPN's
/// objectness BCE and anchor smooth-L1. Empty groups contribute 0.
pub fn compute_loss(tape: &mut Tape, inp: &LossInputs) -> Result<LossVars> {
    let zero = |tape: &mut Tape| tape.constant(Tensor::scalar(0.0));

    let cls = tape.cross_entropy(inp.class_logits, inp.roi_classes)?;

    let bbox = if inp.box_targets.is_empty() {
        zero(tape)
    } else {
        let shape = tape.shape(inp.box_deltas).to_vec();
        let k = shape[1] / 4;
        let per_class = tape.reshape(inp.box_deltas, &[shape[0] * k, 4])?;
        let rows: Vec<usize> = inp.box_targets.iter().map(|&(r, c, _)| r * k + c).collect();
        let picked = tape.gather_rows(per_class, &rows)?;
        let targets: Vec<[f64; 4]> = inp.box_targets.iter().map(|t| t.2).collect();
        tape.smooth_l1(picked, rows_tensor(&targets)?, HEAD_BETA)?
    };

    let mask = if inp.masks.is_empty() {
        zero(tape)
    } else {
        let mut picked = Vec::with_capacity(inp.masks.len());
        let mut targets = Vec::new();
        let mut side = 0;
        for (logits, class, target) in inp.masks {
            let shape = tape.shape(*logits).to_vec();
            side = shape[1];
            if target.shape() != [side, side] {
                return Err(Error::dim(format!(
                    "mask target {:?} does not match logits {shape:?}",
                    target.shape()
                )));
            }
            picked.push(tape.gather_rows(*logits, &[*class])?);
            targets.extend_from_slice(target.data());
        }
        let stacked = tape.concat(&picked)?;
        let target = Tensor::new([inp.masks.len(), side, side], targets)?;
        tape.binary_cross_entropy(stacked, target)?
    };

    let rpn_obj = if inp.rpn_samples.is_empty() {
        zero(tape)
    } else {
        let idx: Vec<usize> = inp.rpn_samples.iter().map(|s| s.0).collect();
        let picked = tape.gather_rows(inp.rpn_logits, &idx)?;
        let labels = Tensor::new([idx.len()], inp.rpn_samples.iter().map(|s| s.1).collect())?;
        tape.binary_cross_entropy(picked, labels)?
    };

    let rpn_box = if inp.rpn_box_targets.is_empty() {
        zero(tape)
    } else {
        let idx: Vec<usize> = inp.rpn_box_targets.iter().map(|s| s.0).collect();
        let picked = tape.gather_rows(inp.rpn_deltas, &idx)?;
        let targets: Vec<[f64; 4]> = inp.rpn_box_targets.iter().map(|s| s.1).collect();
        tape.smooth_l1(picked, rows_tensor(&targets)?, RPN_BETA)?
    };

    LossVars::from_parts(tape, [cls, bbox, mask, rpn_obj, rpn_box])
}
