use super::config::{ModelConfig, STRIDES};
use crate::error::{Error, Result};
use crate::roialign::RoiBox;

/// Anchors of every pyramid level, normalized and clipped to the image.
///
/// Within a level, anchor `a` at cell `(y, x)` has index `(a * H + y) * W + x`,
/// matching the layout of the RPN output maps; `a = scale * n_ratios + ratio`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    levels: Vec<Vec<RoiBox>>,
    shapes: Vec<(usize, usize)>,
    per_cell: usize,
}

impl AnchorSet {
    /// Anchors for feature maps of the given `(H, W)` per level.
    pub fn generate(cfg: &ModelConfig, shapes: &[(usize, usize)]) -> Result<Self> {
        if shapes.len() != STRIDES.len() {
            return Err(Error::dim(format!("expected {} levels, got {}", STRIDES.len(), shapes.len())));
        }
        let size = cfg.image_size as f64;
        let mut levels = Vec::with_capacity(shapes.len());
        for (lvl, &(h, w)) in shapes.iter().enumerate() {
            let stride = STRIDES[lvl] as f64;
            let mut boxes = Vec::with_capacity(h * w * cfg.anchors_per_cell());
            for &scale in &cfg.anchor_scales {
                for &ratio in &cfg.anchor_ratios {
                    let side = cfg.anchor_base[lvl] * scale;
                    let ah = side * ratio.sqrt() / size;
                    let aw = side / ratio.sqrt() / size;
                    for y in 0..h {
                        for x in 0..w {
                            let cy = (y as f64 + 0.5) * stride / size;
                            let cx = (x as f64 + 0.5) * stride / size;
                            boxes.push(
                                RoiBox {
                                    y1: cy - 0.5 * ah,
                                    x1: cx - 0.5 * aw,
                                    y2: cy + 0.5 * ah,
                                    x2: cx + 0.5 * aw,
                                }
                                .clipped(),
                            );
                        }
                    }
                }
            }
            levels.push(boxes);
        }
        Ok(Self {
            levels,
            shapes: shapes.to_vec(),
            per_cell: cfg.anchors_per_cell(),
        })
    }

    /// Anchors for the feature shapes implied by `cfg.image_size`.
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        let shapes: Vec<_> = STRIDES
            .iter()
            .map(|s| (cfg.image_size / s, cfg.image_size / s))
            .collect();
        Self::generate(cfg, &shapes)
    }

    pub fn level(&self, i: usize) -> &[RoiBox] {
        &self.levels[i]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn per_cell(&self) -> usize {
        self.per_cell
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All levels concatenated, finest first; the order of the RPN outputs.
    pub fn flat(&self) -> Vec<RoiBox> {
        self.levels.concat()
    }
}
