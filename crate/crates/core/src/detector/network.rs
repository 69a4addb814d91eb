use std::collections::HashMap;

use super::anchors::AnchorSet;
use super::boxes::{nms, BoxCoder};
use super::config::{HeadVariant, ModelConfig, STRIDES};
use super::params::ParamStore;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::roialign::{roi_align, RoiBox};

/// Pyramid levels P2..P4 (strides 2, 4, 8), each `[C, H_i, W_i]`.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid {
    pub levels: [Var; 3],
}

impl Pyramid {
    pub fn shapes(&self, tape: &Tape) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .map(|&v| {
                let s = tape.shape(v);
                (s[1], s[2])
            })
            .collect()
    }
}

/// Raw RPN outputs over all anchors, in [`AnchorSet::flat`] order.
#[derive(Clone, Copy, Debug)]
pub struct RpnOutput {
    /// `[N]` objectness logits.
    pub logits: Var,
    /// `[N, 4]` deltas.
    pub deltas: Var,
}

/// The model's parameters bound to one tape.
pub struct Network<'a> {
    cfg: &'a ModelConfig,
    vars: HashMap<String, Var>,
}

impl<'a> Network<'a> {
    /// Records every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(tape: &mut Tape, cfg: &'a ModelConfig, params: &ParamStore, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Self { cfg, vars }
    }

    /// Uses already recorded variables, keyed by parameter name.
    pub fn from_vars(cfg: &'a ModelConfig, vars: HashMap<String, Var>) -> Self {
        Self { cfg, vars }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name} is not bound")))
    }

    pub fn vars(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    /// Convolution plus bias of layer `name`.
    pub fn conv(&self, tape: &mut Tape, x: Var, name: &str, stride: usize) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        let pad = tape.shape(w)[2] / 2;
        let y = tape.conv2d(x, w, stride, pad)?;
        tape.bias_add(y, b, 0)
    }

    fn conv_relu(&self, tape: &mut Tape, x: Var, name: &str, stride: usize) -> Result<Var> {
        let y = self.conv(tape, x, name, stride)?;
        Ok(tape.relu(y))
    }

    fn deconv_relu(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        let y = tape.conv2d_transpose(x, w, 2)?;
        let y = tape.bias_add(y, b, 0)?;
        Ok(tape.relu(y))
    }

    fn linear(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.bias_add(y, b, 1)
    }

    /// Bottom-up stages C2..C4: a strided conv and one residual block each.
    pub fn bottom_up(&self, tape: &mut Tape, image: Var) -> Result<[Var; 3]> {
        let shape = tape.shape(image).to_vec();
        let n = self.cfg.image_size;
        if shape != [1, n, n] {
            return Err(Error::dim(format!("expected image [1,{n},{n}], got {shape:?}")));
        }
        let mut x = image;
        let mut out = [image; 3];
        for (i, slot) in out.iter_mut().enumerate() {
            let l = i + 2;
            x = self.conv_relu(tape, x, &format!("backbone.down{l}"), 2)?;
            let r = self.conv_relu(tape, x, &format!("backbone.res{l}a"), 1)?;
            let r = self.conv(tape, r, &format!("backbone.res{l}b"), 1)?;
            let sum = tape.add(x, r)?;
            x = tape.relu(sum);
            *slot = x;
        }
        Ok(out)
    }

    /// Bottom-up pathway, 1x1 laterals, nearest-neighbour top-down sum, 3x3 smoothing.
    pub fn backbone(&self, tape: &mut Tape, image: Var) -> Result<Pyramid> {
        let c = self.bottom_up(tape, image)?;
        let mut top: Option<Var> = None;
        let mut merged = [image; 3];
        for i in (0..3).rev() {
            let lat = self.conv(tape, c[i], &format!("fpn.lateral{}", i + 2), 1)?;
            let m = match top {
                Some(t) => {
                    let up = tape.upsample2x(t)?;
                    tape.add(lat, up)?
                }
                None => lat,
            };
            merged[i] = m;
            top = Some(m);
        }
        let mut levels = [image; 3];
        for i in 0..3 {
            levels[i] = self.conv(tape, merged[i], &format!("fpn.output{}", i + 2), 1)?;
        }
        Ok(Pyramid { levels })
    }

    /// Shared 3x3 conv, then per-anchor objectness and deltas on every level.
    pub fn rpn(&self, tape: &mut Tape, pyramid: &Pyramid, anchors: &AnchorSet) -> Result<RpnOutput> {
        let shapes = pyramid.shapes(tape);
        if shapes != anchors.shapes() || anchors.per_cell() != self.cfg.anchors_per_cell() {
            return Err(Error::dim(format!(
                "anchors were generated for {:?}, features are {shapes:?}",
                anchors.shapes()
            )));
        }
        let a = anchors.per_cell();
        let mut logits = Vec::new();
        let mut deltas = Vec::new();
        for (&p, &(h, w)) in pyramid.levels.iter().zip(&shapes) {
            let t = self.conv_relu(tape, p, "rpn.conv", 1)?;
            let o = self.conv(tape, t, "rpn.objectness", 1)?;
            logits.push(tape.reshape(o, &[a * h * w])?);
            let d = self.conv(tape, t, "rpn.deltas", 1)?;
            let d = tape.reshape(d, &[4, a * h * w])?;
            deltas.push(tape.transpose2d(d)?);
        }
        Ok(RpnOutput {
            logits: tape.concat(&logits)?,
            deltas: tape.concat(&deltas)?,
        })
    }

    /// Two hidden FC layers over flattened `[C, S, S]` ROI features:
    /// `([R, K] class logits, [R, 4K] per-class deltas)`.
    pub fn class_head(&self, tape: &mut Tape, rois: &[Var]) -> Result<(Var, Var)> {
        if rois.is_empty() {
            return Err(Error::Empty("class head needs at least one ROI".into()));
        }
        let s = self.cfg.roi.small;
        let flat_len = self.cfg.channels * s * s;
        let mut rows = Vec::with_capacity(rois.len());
        for &r in rois {
            let shape = tape.shape(r).to_vec();
            if shape != [self.cfg.channels, s, s] {
                return Err(Error::dim(format!(
                    "class head expects [{},{s},{s}], got {shape:?}",
                    self.cfg.channels
                )));
            }
            rows.push(tape.reshape(r, &[1, flat_len])?);
        }
        let x = tape.concat(&rows)?;
        let x = self.linear(tape, x, "cls.fc1")?;
        let x = tape.relu(x);
        let x = self.linear(tape, x, "cls.fc2")?;
        let x = tape.relu(x);
        let logits = self.linear(tape, x, "cls.logits")?;
        let deltas = self.linear(tape, x, "cls.deltas")?;
        Ok((logits, deltas))
    }

    fn check_roi(&self, tape: &Tape, v: Var, side: usize, what: &str) -> Result<()> {
        let shape = tape.shape(v);
        if shape != [self.cfg.channels, side, side] {
            return Err(Error::dim(format!(
                "{what} expects [{},{side},{side}], got {shape:?}",
                self.cfg.channels
            )));
        }
        Ok(())
    }

    /// Four 3x3 convs and one 2x transposed conv: `[M, 2S, 2S]`.
    pub fn mask_trunk(&self, tape: &mut Tape, roi14: Var) -> Result<Var> {
        self.check_roi(tape, roi14, self.cfg.roi.small, "mask head")?;
        let mut x = roi14;
        for i in 1..=4 {
            x = self.conv_relu(tape, x, &format!("mask.conv{i}"), 1)?;
        }
        self.deconv_relu(tape, x, "mask.deconv1")
    }

    /// `[K, 2S, 2S]` mask logits from the small ROI features.
    pub fn mask_head_baseline(&self, tape: &mut Tape, roi14: Var) -> Result<Var> {
        if self.cfg.head != HeadVariant::Baseline {
            return Err(Error::Config("model carries the improved mask head".into()));
        }
        let x = self.mask_trunk(tape, roi14)?;
        self.conv(tape, x, "mask.logits", 1)
    }

    /// Second decoder stage to `[M, 4S, 4S]`, without the skip fusion.
    pub fn mask_decoder(&self, tape: &mut Tape, roi14: Var) -> Result<Var> {
        let x = self.mask_trunk(tape, roi14)?;
        self.deconv_relu(tape, x, "mask.deconv2")
    }

    /// `[K, 4S, 4S]` mask logits: decoder output concatenated with the large
    /// ROI features, two fusion convs, per-class 1x1.
    pub fn mask_head_improved(&self, tape: &mut Tape, roi14: Var, roi56: Var) -> Result<Var> {
        if self.cfg.head != HeadVariant::Improved {
            return Err(Error::Config("model carries the baseline mask head".into()));
        }
        self.check_roi(tape, roi56, self.cfg.roi.large, "mask head skip input")?;
        let dec = self.mask_decoder(tape, roi14)?;
        let fused = tape.concat(&[dec, roi56])?;
        let x = self.conv_relu(tape, fused, "mask.fuse1", 1)?;
        let x = self.conv_relu(tape, x, "mask.fuse2", 1)?;
        self.conv(tape, x, "mask.logits", 1)
    }

    /// Dispatches on the configured head; `roi56` is required for the improved one.
    pub fn mask_head(&self, tape: &mut Tape, roi14: Var, roi56: Option<Var>) -> Result<Var> {
        match (self.cfg.head, roi56) {
            (HeadVariant::Baseline, _) => self.mask_head_baseline(tape, roi14),
            (HeadVariant::Improved, Some(r)) => self.mask_head_improved(tape, roi14, r),
            (HeadVariant::Improved, None) => Err(Error::arg("improved mask head needs the large ROI features")),
        }
    }

    /// ROIAligned features of `roi` from its assigned level: the small block,
    /// plus the large one when `with_large` is set and the head uses it.
    pub fn roi_features(
        &self,
        tape: &mut Tape,
        pyramid: &Pyramid,
        roi: &RoiBox,
        with_large: bool,
    ) -> Result<(Var, Option<Var>)> {
        let level = pyramid.levels[assign_level(self.cfg, roi)];
        let r = &self.cfg.roi;
        let small = roi_align(tape, level, roi, r.small, r.sampling_ratio)?;
        let large = match self.cfg.head {
            HeadVariant::Improved if with_large => Some(roi_align(tape, level, roi, r.large, r.sampling_ratio)?),
            _ => None,
        };
        Ok((small, large))
    }
}

/// Pyramid level for a ROI: larger boxes read coarser maps.
pub fn assign_level(cfg: &ModelConfig, roi: &RoiBox) -> usize {
    let side = roi.area().sqrt() * cfg.image_size as f64;
    cfg.level_thresholds
        .iter()
        .position(|&t| side < t)
        .unwrap_or(STRIDES.len() - 1)
}

/// Top-scoring RPN boxes after decoding, small-box removal and NMS.
pub fn proposals(
    cfg: &ModelConfig,
    anchors: &[RoiBox],
    logits: &[f64],
    deltas: &[f64],
) -> Result<Vec<(RoiBox, f64)>> {
    if logits.len() != anchors.len() || deltas.len() != 4 * anchors.len() {
        return Err(Error::dim("RPN outputs do not match the anchor count"));
    }
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(cfg.rpn_pre_nms);
    let min_side = 1.0 / cfg.image_size as f64;
    let mut boxes = Vec::with_capacity(order.len());
    let mut scores = Vec::with_capacity(order.len());
    for i in order {
        let d = [deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]];
        let b = BoxCoder::RPN.decode(&anchors[i], d)?;
        if b.height() >= min_side && b.width() >= min_side && b.is_valid() {
            boxes.push(b);
            scores.push(sigmoid(logits[i]));
        }
    }
    let keep = nms(&boxes, &scores, cfg.rpn_nms_threshold);
    Ok(keep
        .into_iter()
        .take(cfg.rpn_post_nms)
        .map(|i| (boxes[i], scores[i]))
        .collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    crate::autograd::sigmoid_scalar(x)
}
