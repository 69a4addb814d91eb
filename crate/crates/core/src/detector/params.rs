use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{HeadVariant, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Weight shapes of the whole model; biases are 1-D and start at zero.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut conv = |name: &str, oc: usize, ic: usize, k: usize| {
        out.push((format!("{name}.w"), vec![oc, ic, k, k]));
        out.push((format!("{name}.b"), vec![oc]));
    };
    let s = cfg.stem_channels;
    let widths = [s, 2 * s, 4 * s];
    let c = cfg.channels;
    let a = cfg.anchors_per_cell();
    let k = cfg.num_classes;
    let m = cfg.mask_channels;
    let f = cfg.fusion_channels;

    let mut prev = 1;
    for (i, &w) in widths.iter().enumerate() {
        let l = i + 2;
        conv(&format!("backbone.down{l}"), w, prev, 3);
        conv(&format!("backbone.res{l}a"), w, w, 3);
        conv(&format!("backbone.res{l}b"), w, w, 3);
        prev = w;
    }
    for (i, &w) in widths.iter().enumerate() {
        conv(&format!("fpn.lateral{}", i + 2), c, w, 1);
        conv(&format!("fpn.output{}", i + 2), c, c, 3);
    }
    conv("rpn.conv", c, c, 3);
    conv("rpn.objectness", a, c, 1);
    conv("rpn.deltas", 4 * a, c, 1);
    conv("mask.conv1", m, c, 3);
    conv("mask.conv2", m, m, 3);
    conv("mask.conv3", m, m, 3);
    conv("mask.conv4", m, m, 3);
    out.push(("mask.deconv1.w".into(), vec![m, m, 2, 2]));
    out.push(("mask.deconv1.b".into(), vec![m]));
    let logits_in = match cfg.head {
        HeadVariant::Baseline => m,
        HeadVariant::Improved => {
            out.push(("mask.deconv2.w".into(), vec![m, m, 2, 2]));
            out.push(("mask.deconv2.b".into(), vec![m]));
            out.push(("mask.fuse1.w".into(), vec![f, m + c, 3, 3]));
            out.push(("mask.fuse1.b".into(), vec![f]));
            out.push(("mask.fuse2.w".into(), vec![f, f, 3, 3]));
            out.push(("mask.fuse2.b".into(), vec![f]));
            f
        }
    };
    out.push(("mask.logits.w".into(), vec![k, logits_in, 1, 1]));
    out.push(("mask.logits.b".into(), vec![k]));

    let side = cfg.roi.small;
    let mut fc = |name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o]));
        out.push((format!("{name}.b"), vec![o]));
    };
    fc("cls.fc1", c * side * side, cfg.fc_dim);
    fc("cls.fc2", cfg.fc_dim, cfg.fc_dim);
    fc("cls.logits", cfg.fc_dim, k);
    fc("cls.deltas", cfg.fc_dim, 4 * k);
    out
}

/// Fan-in of a weight tensor: all but the output axis.
fn fan_in(name: &str, shape: &[usize]) -> usize {
    if name.starts_with("mask.deconv") {
        // [C_in, C_out, kh, kw]: each output sees C_in taps per stride phase.
        shape[0]
    } else if shape.len() == 2 {
        shape[0]
    } else {
        shape[1..].iter().product()
    }
}

fn init_std(name: &str, shape: &[usize]) -> f64 {
    match name {
        "rpn.objectness.w" | "rpn.deltas.w" | "cls.logits.w" => 0.01,
        "cls.deltas.w" => 0.001,
        _ => (2.0 / fan_in(name, shape) as f64).sqrt(),
    }
}

impl ParamStore {
    /// He-normal weights from `seed`, zero biases; small heads for the final predictors.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".b") {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::randn(&shape, init_std(&name, &shape), &mut rng)
                };
                (name, t)
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Every parameter set to zero.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = layout(cfg)
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Ok(Self { tensors })
    }

    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let expected = layout(cfg);
        if expected.len() != tensors.len() {
            return Err(Error::Config(format!(
                "model expects {} parameters, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "parameter {name} has shape {:?}, model expects {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}
