//! Instance segmentation with a decoder-augmented, skip-fused mask head, and
//! the quantitative evaluation used for musculoskeletal MRI: overlap and
//! boundary metrics, effusion volumetry, surface distances and flattened
//! cartilage thickness maps.
//!
//! Everything is built on a small reverse-mode autodiff [`Tape`] over dense
//! `f64` tensors, sized for desk-scale synthetic phantoms.

pub mod autograd;
pub mod cart_geometry;
pub mod classes;
pub mod detector;
pub mod error;
pub mod kv;
pub mod mask;
pub mod roialign;
pub mod seg_metrics;
pub mod spatial;
pub mod tensor;
pub mod training;
pub mod volume_io;

pub use autograd::{grad_check, GradCheck, Tape, Var};
pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use roialign::{RoiAlignConfig, RoiBox};
pub use tensor::Tensor;
