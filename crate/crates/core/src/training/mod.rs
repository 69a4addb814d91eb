//! Training and inference for the detector, and the synthetic phantom scenes
//! it is trained on.
//!
//! The loss of one image is the unweighted sum of five terms: ROI
//! classification cross-entropy, ROI box smooth-L1, mask binary cross-entropy
//! on the ground-truth class channel, RPN objectness and RPN box regression.
//! A batch averages each term over its images and sums the averages.

mod dataset;
mod infer;
mod loss;
mod optim;
mod synth;
mod targets;
mod train;

pub use dataset::{dataset_names, read_dataset, read_image, write_dataset};
pub use infer::{infer, top_detection_dice};
pub use loss::{compute_loss, LossBreakdown, LossInputs, LossVars, HEAD_BETA, RPN_BETA};
pub use optim::Adam;
pub use synth::{synth_generate, Instance, Scene, SceneConfig, SceneParams, SynthScene, INTENSITY};
pub use targets::{assign_targets, best_match, mask_target, sample_anchors, sample_rois, AnchorLabel, SampledRoi};
pub use train::{
    batch_gradients, image_loss, read_batch_csv, train, write_batch_csv, write_loss_csv, BatchLoss, EpochLoss,
    TrainConfig, TrainOutput,
};
