use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{compute_loss, LossBreakdown, LossInputs, LossVars};
use super::optim::Adam;
use super::synth::Scene;
use super::targets::{assign_targets, mask_target, sample_anchors, sample_rois, AnchorLabel};
use crate::autograd::Tape;
use crate::detector::{proposals, AnchorSet, BoxCoder, Checkpoint, ModelConfig, Network, ParamStore};
use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::Tensor;
use crate::volume_io::fmt_f64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Anchors at or above this IoU are RPN positives.
    pub rpn_positive_iou: f64,
    /// Anchors at or below this IoU are RPN negatives.
    pub rpn_negative_iou: f64,
    pub rpn_samples: usize,
    pub roi_samples: usize,
    pub roi_positive_fraction: f64,
    pub roi_positive_iou: f64,
    /// Foreground ROIs per image that receive mask supervision.
    pub mask_rois: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            seed: 7,
            batch_size: 2,
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            rpn_samples: 64,
            roi_samples: 32,
            roi_positive_fraction: 0.5,
            roi_positive_iou: 0.5,
            mask_rois: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(1..=4).contains(&self.batch_size) {
            return bad("batch_size must lie in 1..=4");
        }
        if !(0.0 <= self.rpn_negative_iou
            && self.rpn_negative_iou < self.rpn_positive_iou
            && self.rpn_positive_iou <= 1.0)
        {
            return bad("anchor thresholds must satisfy 0 <= negative < positive <= 1");
        }
        if self.rpn_samples < 2 || self.roi_samples == 0 {
            return bad("sample counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.roi_positive_fraction) || !(0.0..=1.0).contains(&self.roi_positive_iou) {
            return bad("ROI fractions and thresholds must lie in [0,1]");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("rpn_positive_iou", self.rpn_positive_iou.to_string()),
            ("rpn_negative_iou", self.rpn_negative_iou.to_string()),
            ("rpn_samples", self.rpn_samples.to_string()),
            ("roi_samples", self.roi_samples.to_string()),
            ("roi_positive_fraction", self.roi_positive_fraction.to_string()),
            ("roi_positive_iou", self.roi_positive_iou.to_string()),
            ("mask_rois", self.mask_rois.to_string()),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut m = kv::parse(text)?;
        let mut c = Self::default();
        kv::take(&mut m, "epochs", &mut c.epochs)?;
        kv::take(&mut m, "learning_rate", &mut c.learning_rate)?;
        kv::take(&mut m, "seed", &mut c.seed)?;
        kv::take(&mut m, "batch_size", &mut c.batch_size)?;
        kv::take(&mut m, "rpn_positive_iou", &mut c.rpn_positive_iou)?;
        kv::take(&mut m, "rpn_negative_iou", &mut c.rpn_negative_iou)?;
        kv::take(&mut m, "rpn_samples", &mut c.rpn_samples)?;
        kv::take(&mut m, "roi_samples", &mut c.roi_samples)?;
        kv::take(&mut m, "roi_positive_fraction", &mut c.roi_positive_fraction)?;
        kv::take(&mut m, "roi_positive_iou", &mut c.roi_positive_iou)?;
        kv::take(&mut m, "mask_rois", &mut c.mask_rois)?;
        kv::finish(m)?;
        c.validate()?;
        Ok(c)
    }
}

/// Records the full forward pass and loss of one scene.
pub fn image_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    net: &Network,
    anchors: &AnchorSet,
    scene: &Scene,
    tcfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossVars> {
    let cfg = net.config();
    let image = tape.constant(scene.image.clone());
    let pyramid = net.backbone(tape, image)?;
    let rpn = net.rpn(tape, &pyramid, anchors)?;
    let flat = anchors.flat();

    let gt: Vec<_> = scene.instances.iter().map(|i| i.bbox).collect();
    let gt_classes: Vec<usize> = scene.instances.iter().map(|i| i.class_id as usize).collect();
    if let Some(&c) = gt_classes.iter().find(|&&c| c == 0 || c >= cfg.num_classes) {
        return Err(Error::arg(format!("instance class {c} outside 1..{}", cfg.num_classes)));
    }

    let labels = assign_targets(&flat, &gt, tcfg.rpn_positive_iou, tcfg.rpn_negative_iou);
    let sampled = sample_anchors(&labels, tcfg.rpn_samples, rng);
    let rpn_samples: Vec<(usize, f64)> = sampled.iter().map(|&(i, g)| (i, g.is_some() as u8 as f64)).collect();
    let mut rpn_box_targets = Vec::new();
    for &(i, g) in &sampled {
        if let Some(j) = g {
            debug_assert!(matches!(labels[i], AnchorLabel::Positive(_)));
            rpn_box_targets.push((i, BoxCoder::RPN.encode(&flat[i], &gt[j])?));
        }
    }

    let mut candidates: Vec<_> = proposals(
        cfg,
        &flat,
        tape.value(rpn.logits).data(),
        tape.value(rpn.deltas).data(),
    )?
    .into_iter()
    .map(|(b, _)| b)
    .collect();
    candidates.extend_from_slice(&gt);
    let rois = sample_rois(
        &candidates,
        &gt,
        &gt_classes,
        tcfg.roi_samples,
        tcfg.roi_positive_fraction,
        tcfg.roi_positive_iou,
        rng,
    );

    let side = cfg.mask_side();
    let mut small = Vec::with_capacity(rois.len());
    let mut masks = Vec::new();
    let mut box_targets = Vec::new();
    for (row, r) in rois.iter().enumerate() {
        let want_mask = r.gt.is_some() && masks.len() < tcfg.mask_rois;
        let (s, l) = net.roi_features(tape, &pyramid, &r.roi, want_mask)?;
        small.push(s);
        if let Some(j) = r.gt {
            box_targets.push((row, r.class, BoxCoder::HEAD.encode(&r.roi, &gt[j])?));
            if want_mask {
                let logits = net.mask_head(tape, s, l)?;
                let target = mask_target(&scene.instances[j].mask, &r.roi, side)?;
                masks.push((logits, r.class, target));
            }
        }
    }
    let roi_classes: Vec<usize> = rois.iter().map(|r| r.class).collect();
    let (class_logits, box_deltas) = net.class_head(tape, &small)?;

    compute_loss(
        tape,
        &LossInputs {
            rpn_logits: rpn.logits,
            rpn_deltas: rpn.deltas,
            rpn_samples: &rpn_samples,
            rpn_box_targets: &rpn_box_targets,
            class_logits,
            roi_classes: &roi_classes,
            box_deltas,
            box_targets: &box_targets,
            masks: &masks,
        },
    )
}

/// Mean loss of a batch and its gradient for every parameter.
pub fn batch_gradients<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    params: &ParamStore,
    anchors: &AnchorSet,
    batch: &[&Scene],
    tcfg: &TrainConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let net = Network::bind(&mut tape, cfg, params, true);
    let per_image = batch
        .iter()
        .map(|scene| image_loss(&mut tape, &net, anchors, scene, tcfg, rng))
        .collect::<Result<Vec<_>>>()?;
    let loss = LossVars::mean(&mut tape, &per_image)?;
    let breakdown = loss.breakdown(&tape);
    if !breakdown.total.is_finite() {
        return Ok((breakdown, BTreeMap::new()));
    }
    tape.backward(loss.total)?;
    let grads = net
        .vars()
        .iter()
        .map(|(name, &v)| {
            let g = tape
                .grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
            (name.clone(), g)
        })
        .collect();
    Ok((breakdown, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the epoch's batch losses.
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLoss>,
    pub batches: Vec<BatchLoss>,
}

/// Adam on the summed multi-task loss. Parameters start from `seed`; each
/// epoch visits the scenes in a seeded random order. `on_batch` sees every
/// batch loss as it is computed.
pub fn train(
    scenes: &[Scene],
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    mut on_batch: impl FnMut(&BatchLoss),
) -> Result<TrainOutput> {
    tcfg.validate()?;
    mcfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training needs at least one scene".into()));
    }
    for (i, s) in scenes.iter().enumerate() {
        let n = mcfg.image_size;
        if s.image.shape() != [1, n, n] {
            return Err(Error::dim(format!(
                "scene {i} image is {:?}, model expects [1,{n},{n}]",
                s.image.shape()
            )));
        }
        if s.instances.is_empty() {
            return Err(Error::Empty(format!("scene {i} has no instances")));
        }
    }
    let anchors = AnchorSet::for_config(mcfg)?;
    let mut params = ParamStore::init(mcfg, tcfg.seed)?;
    let mut adam = Adam::new(tcfg.learning_rate);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    sample_rng.set_stream(1);
    let mut order_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    order_rng.set_stream(2);

    let mut epochs = Vec::with_capacity(tcfg.epochs);
    let mut batches = Vec::new();
    for epoch in 1..=tcfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut order_rng);
        let mut epoch_losses = Vec::new();
        for (step, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &scenes[i]).collect();
            let (loss, grads) = batch_gradients(mcfg, &params, &anchors, &batch, tcfg, &mut sample_rng)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    detail: format!("non-finite loss {loss:?}"),
                });
            }
            adam.step(&mut params, &grads)?;
            if let Some((name, _)) = params.iter().find(|(_, t)| !t.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    detail: format!("parameter {name} became non-finite"),
                });
            }
            let b = BatchLoss { epoch, step: step + 1, loss };
            on_batch(&b);
            batches.push(b);
            epoch_losses.push(loss);
        }
        epochs.push(EpochLoss {
            epoch,
            loss: LossBreakdown::mean(&epoch_losses),
        });
        log::info!("epoch {epoch}: total {:.6}", epochs.last().unwrap().loss.total);
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            config: mcfg.clone(),
            params,
        },
        epochs,
        batches,
    })
}

/// `epoch,total,l_cls,l_bbox,l_mask` per epoch. The total also includes the
/// RPN terms, which are in the batch log.
pub fn write_loss_csv(path: &Path, epochs: &[EpochLoss]) -> Result<()> {
    let mut s = String::from("epoch,total,l_cls,l_bbox,l_mask\n");
    for e in epochs {
        let l = &e.loss;
        writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch,
            fmt_f64(l.total),
            fmt_f64(l.l_cls),
            fmt_f64(l.l_bbox),
            fmt_f64(l.l_mask)
        )
        .unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Every batch with all five components.
pub fn write_batch_csv(path: &Path, batches: &[BatchLoss]) -> Result<()> {
    let mut s = String::from("epoch,step,total,l_cls,l_bbox,l_mask,l_rpn_obj,l_rpn_box\n");
    for b in batches {
        let l = &b.loss;
        write!(s, "{},{},{}", b.epoch, b.step, fmt_f64(l.total)).unwrap();
        for c in l.components() {
            write!(s, ",{}", fmt_f64(c)).unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`write_batch_csv`].
pub fn read_batch_csv(path: &Path) -> Result<Vec<BatchLoss>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("line {}: {line}", n + 1));
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        out.push(BatchLoss {
            epoch: f[0].parse().map_err(|_| bad())?,
            step: f[1].parse().map_err(|_| bad())?,
            loss: LossBreakdown {
                total: num(2)?,
                l_cls: num(3)?,
                l_bbox: num(4)?,
                l_mask: num(5)?,
                l_rpn_obj: num(6)?,
                l_rpn_box: num(7)?,
            },
        });
    }
    Ok(out)
}
