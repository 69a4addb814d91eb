//! Bilinear ROIAlign without coordinate quantization.
//!
//! Continuous pixel coordinates span `[0, extent]` and cell `i` has its
//! center at `i + 0.5`. Each output bin averages `sampling_ratio^2` bilinear
//! samples placed at the centers of a regular sub-grid of the bin. Samples
//! outside the map clamp their neighbours to the border.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{SamplingPlan, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box in coordinates normalized to the image extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub y1: f64,
    pub x1: f64,
    pub y2: f64,
    pub x2: f64,
}

impl RoiBox {
    /// Builds a box, enforcing `0 <= y1 < y2 <= 1` and `0 <= x1 < x2 <= 1`.
    pub fn new(y1: f64, x1: f64, y2: f64, x2: f64) -> Result<Self> {
        let b = Self { y1, x1, y2, x2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Degenerate(format!("invalid normalized box {b:?}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..1.0).contains(&self.y1)
            && (0.0..1.0).contains(&self.x1)
            && self.y1 < self.y2
            && self.x1 < self.x2
            && self.y2 <= 1.0
            && self.x2 <= 1.0
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn area(&self) -> f64 {
        self.height().max(0.0) * self.width().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.y1 + self.y2), 0.5 * (self.x1 + self.x2))
    }

    pub fn clipped(&self) -> Self {
        Self {
            y1: self.y1.clamp(0.0, 1.0),
            x1: self.x1.clamp(0.0, 1.0),
            y2: self.y2.clamp(0.0, 1.0),
            x2: self.x2.clamp(0.0, 1.0),
        }
    }

    pub fn iou(&self, other: &RoiBox) -> f64 {
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let inter = ih * iw;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Output sizes and sampling density of the two ROIAlign blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiAlignConfig {
    pub small: usize,
    pub large: usize,
    pub sampling_ratio: usize,
}

impl Default for RoiAlignConfig {
    fn default() -> Self {
        Self {
            small: 14,
            large: 56,
            sampling_ratio: 2,
        }
    }
}

/// Bilinear taps `(index, weight)` for coordinate `c` on an axis of `n` cells.
pub(crate) fn axis_taps(c: f64, n: usize) -> [(usize, f64); 2] {
    let u = c - 0.5;
    let lo = u.floor();
    let frac = u - lo;
    let clamp = |i: f64| i.clamp(0.0, (n - 1) as f64) as usize;
    [(clamp(lo), 1.0 - frac), (clamp(lo + 1.0), frac)]
}

/// Precomputes the sparse sampling weights of one ROI on an `h x w` map.
pub fn roi_align_plan(
    h: usize,
    w: usize,
    roi: &RoiBox,
    output_size: usize,
    sampling_ratio: usize,
) -> Result<SamplingPlan> {
    if output_size == 0 || sampling_ratio == 0 {
        return Err(Error::arg("output_size and sampling_ratio must be at least 1"));
    }
    let (y1, x1) = (roi.y1 * h as f64, roi.x1 * w as f64);
    let (y2, x2) = (roi.y2 * h as f64, roi.x2 * w as f64);
    if !(y2 - y1 > 0.0 && x2 - x1 > 0.0) {
        return Err(Error::Degenerate(format!(
            "ROI {roi:?} has zero area on a {h}x{w} map"
        )));
    }
    let bin_h = (y2 - y1) / output_size as f64;
    let bin_w = (x2 - x1) / output_size as f64;
    let r = sampling_ratio;
    let norm = 1.0 / (r * r) as f64;
    let mut offsets = Vec::with_capacity(output_size * output_size + 1);
    let mut taps = Vec::with_capacity(output_size * output_size * r * r * 4);
    offsets.push(0);
    for i in 0..output_size {
        for j in 0..output_size {
            for sy in 0..r {
                let y = y1 + i as f64 * bin_h + (sy as f64 + 0.5) * bin_h / r as f64;
                let ty = axis_taps(y, h);
                for sx in 0..r {
                    let x = x1 + j as f64 * bin_w + (sx as f64 + 0.5) * bin_w / r as f64;
                    let tx = axis_taps(x, w);
                    for &(iy, wy) in &ty {
                        for &(ix, wx) in &tx {
                            taps.push((iy * w + ix, wy * wx * norm));
                        }
                    }
                }
            }
            offsets.push(taps.len());
        }
    }
    Ok(SamplingPlan {
        in_h: h,
        in_w: w,
        out_h: output_size,
        out_w: output_size,
        offsets,
        taps,
    })
}

/// Records ROIAlign of `[C,H,W]` features on the tape; differentiable in the features.
pub fn roi_align(
    tape: &mut Tape,
    features: Var,
    roi: &RoiBox,
    output_size: usize,
    sampling_ratio: usize,
) -> Result<Var> {
    let (_, h, w) = tape.value(features).chw()?;
    let plan = roi_align_plan(h, w, roi, output_size, sampling_ratio)?;
    tape.resample(features, Arc::new(plan))
}

/// Both ROIAlign resolutions from the same map and ROI: `(small, large)`.
pub fn roi_align_pair(
    tape: &mut Tape,
    features: Var,
    roi: &RoiBox,
    config: &RoiAlignConfig,
) -> Result<(Var, Var)> {
    let small = roi_align(tape, features, roi, config.small, config.sampling_ratio)?;
    let large = roi_align(tape, features, roi, config.large, config.sampling_ratio)?;
    Ok((small, large))
}

/// ROIAlign on a plain tensor, outside any tape.
pub fn roi_align_tensor(
    features: &Tensor,
    roi: &RoiBox,
    output_size: usize,
    sampling_ratio: usize,
) -> Result<Tensor> {
    let (c, h, w) = features.chw()?;
    let plan = roi_align_plan(h, w, roi, output_size, sampling_ratio)?;
    Tensor::new([c, output_size, output_size], plan.apply(features.data(), c))
}
