//! The desk-scale instance segmentation network.
//!
//! A three-level residual pyramid (strides 2, 4, 8) with lateral top-down
//! fusion feeds a region proposal network shared across levels. Each ROI is
//! ROIAligned from the level matching its size and passed to a two-layer
//! classification head and one of two mask heads:
//!
//! * baseline: four 3x3 convs and a 2x transposed conv on the 14x14 ROI,
//!   28x28 logits per class;
//! * improved: the same trunk, a second 2x decoder stage, concatenation with a
//!   56x56 ROIAlign of the same box, two fusion convs, 56x56 logits per class.

mod anchors;
mod boxes;
mod checkpoint;
mod config;
mod network;
mod params;
mod paste;

pub use anchors::AnchorSet;
pub use boxes::{decode_boxes, encode_boxes, nms, BoxCoder};
pub use checkpoint::Checkpoint;
pub use config::{HeadVariant, ModelConfig, STRIDES};
pub use network::{assign_level, proposals, Network, Pyramid, RpnOutput};
pub use params::ParamStore;
pub use paste::paste_mask;

use crate::mask::BinaryMask;
use crate::roialign::RoiBox;
use crate::tensor::Tensor;

/// One detected instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// Foreground class, at least 1.
    pub class_id: usize,
    /// Softmax probability of `class_id`.
    pub score: f64,
    pub bbox: RoiBox,
    /// `[S, S]` logits of the detected class's mask channel.
    pub mask_logits: Tensor,
    pub image_mask: Option<BinaryMask>,
}
