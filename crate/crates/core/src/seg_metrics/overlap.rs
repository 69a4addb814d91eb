use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Voxel-wise confusion counts of a predicted mask against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        pred.same_grid(gt)?;
        let mut c = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `tp / (tp + fp)`; undefined when nothing was predicted.
pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fp == 0 {
        return Err(Error::Undefined("no positive predictions".into()));
    }
    Ok(c.tp as f64 / (c.tp + c.fp) as f64)
}

/// `2tp / (2tp + fp + fn)`, with two empty masks scoring 1.
pub fn dice_counts(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return 1.0;
    }
    (2 * c.tp) as f64 / denom as f64
}

pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(dice_counts(&ConfusionCounts::from_masks(pred, gt)?))
}
