//! Label ids shared by the synthetic scenes, the detector and the volume files.

use crate::volume_io::LabelTable;

pub const BACKGROUND: u16 = 0;
pub const FEMUR: u16 = 1;
pub const TIBIA: u16 = 2;
pub const CARTILAGE: u16 = 3;
pub const EFFUSION: u16 = 4;

/// Number of detector classes including background.
pub const NUM_CLASSES: usize = 5;

pub const NAMES: [&str; NUM_CLASSES] = ["background", "femur-like", "tibia-like", "cartilage-like", "effusion-like"];

pub fn label_table() -> LabelTable {
    NAMES.iter().enumerate().map(|(i, n)| (i as u16, n.to_string())).collect()
}
