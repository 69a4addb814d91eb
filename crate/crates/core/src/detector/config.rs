use std::fmt::Write as _;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;
use crate::roialign::RoiAlignConfig;

/// Which mask head the model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadVariant {
    /// Four convs, one 2x transposed conv: 28x28 logits from the 14x14 ROI.
    Baseline,
    /// Baseline trunk plus a second 2x decoder fused with the 56x56 ROI: 56x56 logits.
    Improved,
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Improved => "improved",
        })
    }
}

impl FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "improved" => Ok(Self::Improved),
            _ => Err(Error::Config(format!("unknown head {s:?} (expected baseline or improved)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Classes including background.
    pub num_classes: usize,
    /// Shared pyramid channel count.
    pub channels: usize,
    /// Width of the first bottom-up stage; stages double it.
    pub stem_channels: usize,
    pub mask_channels: usize,
    pub fusion_channels: usize,
    pub fc_dim: usize,
    /// Anchor side in pixels per level before scaling.
    pub anchor_base: Vec<f64>,
    pub anchor_scales: Vec<f64>,
    /// Height over width.
    pub anchor_ratios: Vec<f64>,
    /// ROIs with sqrt(area) in pixels below `level_thresholds[i]` use level `i`.
    pub level_thresholds: Vec<f64>,
    pub rpn_pre_nms: usize,
    pub rpn_post_nms: usize,
    pub rpn_nms_threshold: f64,
    pub nms_threshold: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
    pub roi: RoiAlignConfig,
    pub head: HeadVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            num_classes: crate::classes::NUM_CLASSES,
            channels: 32,
            stem_channels: 16,
            mask_channels: 64,
            fusion_channels: 64,
            fc_dim: 128,
            anchor_base: vec![12.0, 24.0, 48.0],
            anchor_scales: vec![0.75, 1.0, 1.5],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            level_thresholds: vec![32.0, 64.0],
            rpn_pre_nms: 300,
            rpn_post_nms: 50,
            rpn_nms_threshold: 0.7,
            nms_threshold: 0.5,
            score_threshold: 0.5,
            max_detections: 20,
            roi: RoiAlignConfig::default(),
            head: HeadVariant::Improved,
        }
    }
}

pub const STRIDES: [usize; 3] = [2, 4, 8];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || !self.image_size.is_multiple_of(8) {
            return bad(format!("image_size {} must be a positive multiple of 8", self.image_size));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if [self.channels, self.stem_channels, self.mask_channels, self.fusion_channels, self.fc_dim].contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.anchor_base.len() != STRIDES.len() || self.level_thresholds.len() != STRIDES.len() - 1 {
            return bad("anchor_base needs 3 values and level_thresholds 2".into());
        }
        let all_pos = |v: &[f64]| !v.is_empty() && v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !all_pos(&self.anchor_base) || !all_pos(&self.anchor_scales) || !all_pos(&self.anchor_ratios) {
            return bad("anchor sizes, scales and ratios must be positive".into());
        }
        for t in [self.rpn_nms_threshold, self.nms_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("nms thresholds must lie in (0,1), got {t}"));
            }
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad("score_threshold must lie in [0,1]".into());
        }
        if self.roi.small == 0 || self.roi.large != 4 * self.roi.small || self.roi.sampling_ratio == 0 {
            return bad("roi sizes must satisfy large = 4 * small".into());
        }
        if self.rpn_post_nms == 0 || self.rpn_pre_nms == 0 || self.max_detections == 0 {
            return bad("proposal and detection counts must be positive".into());
        }
        Ok(())
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    /// Side of the mask logits grid: 2x the small ROI for baseline, 4x for improved.
    pub fn mask_side(&self) -> usize {
        match self.head {
            HeadVariant::Baseline => 2 * self.roi.small,
            HeadVariant::Improved => self.roi.large,
        }
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        put("image_size", self.image_size.to_string());
        put("num_classes", self.num_classes.to_string());
        put("channels", self.channels.to_string());
        put("stem_channels", self.stem_channels.to_string());
        put("mask_channels", self.mask_channels.to_string());
        put("fusion_channels", self.fusion_channels.to_string());
        put("fc_dim", self.fc_dim.to_string());
        put("anchor_base", kv::join(&self.anchor_base));
        put("anchor_scales", kv::join(&self.anchor_scales));
        put("anchor_ratios", kv::join(&self.anchor_ratios));
        put("level_thresholds", kv::join(&self.level_thresholds));
        put("rpn_pre_nms", self.rpn_pre_nms.to_string());
        put("rpn_post_nms", self.rpn_post_nms.to_string());
        put("rpn_nms_threshold", self.rpn_nms_threshold.to_string());
        put("nms_threshold", self.nms_threshold.to_string());
        put("score_threshold", self.score_threshold.to_string());
        put("max_detections", self.max_detections.to_string());
        put("roi_small", self.roi.small.to_string());
        put("roi_large", self.roi.large.to_string());
        put("roi_sampling_ratio", self.roi.sampling_ratio.to_string());
        put("head", self.head.to_string());
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut m = kv::parse(text)?;
        let mut c = Self::default();
        kv::take(&mut m, "image_size", &mut c.image_size)?;
        kv::take(&mut m, "num_classes", &mut c.num_classes)?;
        kv::take(&mut m, "channels", &mut c.channels)?;
        kv::take(&mut m, "stem_channels", &mut c.stem_channels)?;
        kv::take(&mut m, "mask_channels", &mut c.mask_channels)?;
        kv::take(&mut m, "fusion_channels", &mut c.fusion_channels)?;
        kv::take(&mut m, "fc_dim", &mut c.fc_dim)?;
        kv::take_list(&mut m, "anchor_base", &mut c.anchor_base)?;
        kv::take_list(&mut m, "anchor_scales", &mut c.anchor_scales)?;
        kv::take_list(&mut m, "anchor_ratios", &mut c.anchor_ratios)?;
        kv::take_list(&mut m, "level_thresholds", &mut c.level_thresholds)?;
        kv::take(&mut m, "rpn_pre_nms", &mut c.rpn_pre_nms)?;
        kv::take(&mut m, "rpn_post_nms", &mut c.rpn_post_nms)?;
        kv::take(&mut m, "rpn_nms_threshold", &mut c.rpn_nms_threshold)?;
        kv::take(&mut m, "nms_threshold", &mut c.nms_threshold)?;
        kv::take(&mut m, "score_threshold", &mut c.score_threshold)?;
        kv::take(&mut m, "max_detections", &mut c.max_detections)?;
        kv::take(&mut m, "roi_small", &mut c.roi.small)?;
        kv::take(&mut m, "roi_large", &mut c.roi.large)?;
        kv::take(&mut m, "roi_sampling_ratio", &mut c.roi.sampling_ratio)?;
        kv::take(&mut m, "head", &mut c.head)?;
        kv::finish(m)?;
        c.validate()?;
        Ok(c)
    }
}
