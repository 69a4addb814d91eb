use std::collections::HashMap;

use imrk_core::classes::{CARTILAGE, EFFUSION, FEMUR};
use imrk_core::detector::{AnchorSet, Checkpoint, HeadVariant, ModelConfig, ParamStore};
use imrk_core::training::{
    assign_targets, batch_gradients, compute_loss, infer, read_batch_csv, read_dataset, synth_generate, train,
    write_batch_csv, write_dataset, write_loss_csv, AnchorLabel, LossBreakdown, LossInputs, Scene, SceneConfig,
    TrainConfig,
};
use imrk_core::{Error, RoiBox, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_scene_config() -> SceneConfig {
    SceneConfig {
        image_size: 32,
        crescent_inner: 6.0,
        crescent_outer: 8.0,
        center_jitter: 2.0,
        max_effusions: 2,
        effusion_radius_min: 2.0,
        effusion_radius_max: 3.0,
        ..SceneConfig::default()
    }
}

fn small_model(head: HeadVariant) -> ModelConfig {
    let mut roi = imrk_core::RoiAlignConfig::default();
    roi.small = 4;
    roi.large = 16;
    ModelConfig {
        image_size: 32,
        channels: 4,
        stem_channels: 4,
        mask_channels: 4,
        fusion_channels: 4,
        fc_dim: 8,
        anchor_base: vec![4.0, 8.0, 16.0],
        level_thresholds: vec![8.0, 16.0],
        roi,
        head,
        ..ModelConfig::default()
    }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        rpn_samples: 16,
        roi_samples: 8,
        mask_rois: 2,
        ..TrainConfig::default()
    }
}

fn small_scenes(n: usize, seed: u64) -> Vec<Scene> {
    synth_generate(n, seed, &small_scene_config())
        .unwrap()
        .into_iter()
        .map(|s| s.scene)
        .collect()
}

#[test]
fn synth_is_deterministic_and_validated() {
    let cfg = SceneConfig::default();
    let a = synth_generate(3, 11, &cfg).unwrap();
    let b = synth_generate(3, 11, &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].scene.image, synth_generate(1, 12, &cfg).unwrap()[0].scene.image);
    assert!(matches!(synth_generate(0, 1, &cfg), Err(Error::InvalidArgument(_))));
    let thick = SceneConfig { crescent_inner: 5.0, crescent_outer: 11.0, ..cfg.clone() };
    assert!(matches!(synth_generate(1, 1, &thick), Err(Error::Config(_))));
    let big = SceneConfig { crescent_outer: 70.0, crescent_inner: 60.0, ..cfg.clone() };
    assert!(synth_generate(1, 1, &big).is_err());
    assert_eq!(SceneConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
}

#[test]
fn synth_instances_are_consistent() {
    for s in synth_generate(10, 3, &SceneConfig::default()).unwrap() {
        let scene = &s.scene;
        assert_eq!(scene.image.shape(), &[1, 128, 128]);
        assert_eq!(scene.instances[0].class_id, FEMUR);
        assert_eq!(scene.instances[1].class_id, CARTILAGE);
        assert!(scene.instances[2..].iter().all(|i| i.class_id == EFFUSION));
        assert!(scene.instances.len() <= 5);
        let mut seen = vec![false; 128 * 128];
        for inst in &scene.instances {
            assert!(inst.mask.count() > 0);
            let b = inst.bbox;
            for i in 0..inst.mask.len() {
                if inst.mask.data()[i] {
                    let [x, y, _] = inst.mask.coords(i);
                    let (cy, cx) = ((y as f64 + 0.5) / 128.0, (x as f64 + 0.5) / 128.0);
                    assert!(cy > b.y1 && cy < b.y2 && cx > b.x1 && cx < b.x2);
                    assert!(!seen[i], "instances overlap");
                    seen[i] = true;
                }
            }
        }
    }
}

/// Euclidean distance from each mask pixel to the nearest pixel outside it,
/// by exhaustive search.
fn max_distance_to_outside(mask: &imrk_core::BinaryMask) -> f64 {
    let [w, h, _] = mask.dims();
    let outside: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !mask.get(x, y, 0))
        .map(|(x, y)| (x as f64, y as f64))
        .collect();
    let mut best: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y, 0) {
                let d = outside
                    .iter()
                    .map(|&(ox, oy)| (ox - x as f64).hypot(oy - y as f64))
                    .fold(f64::INFINITY, f64::min);
                best = best.max(d);
            }
        }
    }
    best
}

#[test]
fn crescent_has_the_configured_radial_width() {
    for s in synth_generate(6, 21, &SceneConfig::default()).unwrap() {
        let crescent = &s.scene.instances[1].mask;
        let width = 2.0 * max_distance_to_outside(crescent);
        assert!((width - 4.0).abs() <= 0.5, "width {width}");
    }
}

#[test]
fn dataset_round_trip() {
    let scenes: Vec<(String, Scene)> = synth_generate(3, 5, &SceneConfig::default())
        .unwrap()
        .into_iter()
        .map(|s| (format!("scene_{:03}", s.index), s.scene))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &scenes).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, scenes);
    assert!(read_dataset(&dir.path().join("missing")).is_err());
}

fn iou_oracle(a: &RoiBox, b: &RoiBox) -> f64 {
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let inter = ih * iw;
    inter / ((a.y2 - a.y1) * (a.x2 - a.x1) + (b.y2 - b.y1) * (b.x2 - b.x1) - inter)
}

fn assign_oracle(anchors: &[RoiBox], gt: &[RoiBox]) -> Vec<AnchorLabel> {
    let m: Vec<Vec<f64>> = anchors.iter().map(|a| gt.iter().map(|g| iou_oracle(a, g)).collect()).collect();
    let mut out = Vec::new();
    for row in &m {
        let mut j = 0;
        for k in 1..row.len() {
            if row[k] > row[j] {
                j = k;
            }
        }
        out.push(if row[j] >= 0.7 {
            AnchorLabel::Positive(j)
        } else if row[j] <= 0.3 {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        });
    }
    let mut claimed: HashMap<usize, usize> = HashMap::new();
    for j in 0..gt.len() {
        let mut i = 0;
        for k in 1..anchors.len() {
            if m[k][j] > m[i][j] {
                i = k;
            }
        }
        if m[i][j] > 0.0 {
            claimed.entry(i).or_insert(j);
        }
    }
    for (i, j) in claimed {
        out[i] = AnchorLabel::Positive(j);
    }
    out
}

#[test]
fn anchor_assignment_examples_and_oracle() {
    let g = RoiBox::new(0.2, 0.2, 0.5, 0.6).unwrap();
    let far = RoiBox::new(0.7, 0.7, 0.9, 0.9).unwrap();
    let near = RoiBox::new(0.2, 0.2, 0.5, 0.45).unwrap();
    let labels = assign_targets(&[g, far, near], &[g], 0.7, 0.3);
    assert_eq!(labels, vec![AnchorLabel::Positive(0), AnchorLabel::Negative, AnchorLabel::Ignore]);
    // The best anchor is claimed even below the positive threshold.
    assert_eq!(assign_targets(&[near, far], &[g], 0.7, 0.3)[0], AnchorLabel::Positive(0));
    assert!(assign_targets(&[g, far], &[], 0.7, 0.3).iter().all(|l| *l == AnchorLabel::Negative));

    let mut r = rng(31);
    let boxes = |r: &mut ChaCha8Rng, n: usize| -> Vec<RoiBox> {
        (0..n)
            .map(|_| {
                let y = r.random_range(0.0..0.6);
                let x = r.random_range(0.0..0.6);
                RoiBox::new(y, x, y + r.random_range(0.1..0.4), x + r.random_range(0.1..0.4)).unwrap()
            })
            .collect()
    };
    for _ in 0..50 {
        let anchors = boxes(&mut r, 20);
        let mut gt = boxes(&mut r, 3);
        // Occasionally make a gt coincide with an anchor.
        if r.random_bool(0.3) {
            gt[1] = anchors[r.random_range(0..20)];
        }
        let labels = assign_targets(&anchors, &gt, 0.7, 0.3);
        assert_eq!(labels, assign_oracle(&anchors, &gt));

        // Reversing gt order permutes the matches unless two boxes claim the
        // same best anchor, where the lower index wins by rule.
        let best: Vec<usize> = gt
            .iter()
            .map(|g| (0..20).max_by(|&a, &b| iou_oracle(&anchors[a], g).total_cmp(&iou_oracle(&anchors[b], g))).unwrap())
            .collect();
        if best[0] == best[1] || best[1] == best[2] || best[0] == best[2] {
            continue;
        }
        let rev: Vec<RoiBox> = gt.iter().rev().copied().collect();
        let relabelled: Vec<AnchorLabel> = assign_targets(&anchors, &rev, 0.7, 0.3)
            .into_iter()
            .map(|l| match l {
                AnchorLabel::Positive(j) => AnchorLabel::Positive(2 - j),
                other => other,
            })
            .collect();
        assert_eq!(relabelled, labels);
    }
}

#[test]
fn loss_total_is_the_sum_of_components() {
    let l = LossBreakdown::from_components(1.0, 2.0, 3.0, 0.0, 0.0);
    assert_eq!(l.total, 6.0);
    assert_eq!(l.component_sum(), 6.0);
}

#[test]
fn saturated_predictions_have_near_zero_loss() {
    let mut tape = Tape::new();
    let rpn_logits = tape.param(Tensor::new([4], vec![30.0, -30.0, -30.0, 30.0]).unwrap());
    let rpn_deltas = tape.param(Tensor::full(&[4, 4], 0.25));
    let mut cls = vec![-30.0; 2 * 3];
    cls[2] = 30.0; // row 0 -> class 2
    cls[3] = 30.0; // row 1 -> class 0
    let class_logits = tape.param(Tensor::new([2, 3], cls).unwrap());
    let box_deltas = tape.param(Tensor::full(&[2, 12], 0.5));
    let target = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mask_logits = tape.param(
        Tensor::new(
            [3, 2, 2],
            [vec![0.0; 8], vec![30.0, -30.0, -30.0, 30.0]].concat(),
        )
        .unwrap(),
    );
    let masks = vec![(mask_logits, 2, target)];
    let loss = compute_loss(
        &mut tape,
        &LossInputs {
            rpn_logits,
            rpn_deltas,
            rpn_samples: &[(0, 1.0), (1, 0.0), (2, 0.0), (3, 1.0)],
            rpn_box_targets: &[(0, [0.25; 4]), (3, [0.25; 4])],
            class_logits,
            roi_classes: &[2, 0],
            box_deltas,
            box_targets: &[(0, 2, [0.5; 4])],
            masks: &masks,
        },
    )
    .unwrap();
    let b = loss.breakdown(&tape);
    assert!(b.total < 1e-3, "{b:?}");
    assert_eq!(b.total, b.component_sum());
}

#[test]
fn no_foreground_rois_gives_zero_box_and_mask_loss() {
    let mut tape = Tape::new();
    let rpn_logits = tape.param(Tensor::zeros(&[2]));
    let rpn_deltas = tape.param(Tensor::zeros(&[2, 4]));
    let class_logits = tape.param(Tensor::zeros(&[2, 3]));
    let box_deltas = tape.param(Tensor::zeros(&[2, 12]));
    let loss = compute_loss(
        &mut tape,
        &LossInputs {
            rpn_logits,
            rpn_deltas,
            rpn_samples: &[(0, 0.0), (1, 0.0)],
            rpn_box_targets: &[],
            class_logits,
            roi_classes: &[0, 0],
            box_deltas,
            box_targets: &[],
            masks: &[],
        },
    )
    .unwrap();
    let b = loss.breakdown(&tape);
    assert_eq!((b.l_bbox, b.l_mask, b.l_rpn_box), (0.0, 0.0, 0.0));
    assert!((b.l_cls - 3f64.ln()).abs() < 1e-12);
    assert!((b.l_rpn_obj - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    for head in [HeadVariant::Baseline, HeadVariant::Improved] {
        let cfg = small_model(head);
        let tcfg = small_train();
        let scenes = small_scenes(2, 41);
        let batch: Vec<&Scene> = scenes.iter().collect();
        let anchors = AnchorSet::for_config(&cfg).unwrap();
        let mut params = ParamStore::init(&cfg, 42).unwrap();
        for (name, t) in params.iter_mut() {
            if name.ends_with(".b") {
                let mut r = rng(43);
                t.data_mut().iter_mut().for_each(|x| *x = r.random_range(-0.1..0.1));
            }
        }
        let loss_at = |p: &ParamStore| {
            batch_gradients(&cfg, p, &anchors, &batch, &tcfg, &mut rng(44)).unwrap()
        };
        let (_, grads) = loss_at(&params);
        for (name, idx) in [("mask.logits.w", 5), ("cls.fc2.w", 7)] {
            let h = 1e-5;
            let base = params.get(name).unwrap().data()[idx];
            params.get_mut(name).unwrap().data_mut()[idx] = base + h;
            let plus = loss_at(&params).0.total;
            params.get_mut(name).unwrap().data_mut()[idx] = base - h;
            let minus = loss_at(&params).0.total;
            params.get_mut(name).unwrap().data_mut()[idx] = base;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[name].data()[idx];
            let err = (numeric - analytic).abs() / numeric.abs().max(1.0);
            assert!(err < 1e-4, "{head} {name}: {analytic} vs {numeric}");
            assert!(analytic != 0.0);
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let scenes: Vec<Scene> = synth_generate(2, 51, &SceneConfig::default())
        .unwrap()
        .into_iter()
        .map(|s| s.scene)
        .collect();
    let batch: Vec<&Scene> = scenes.iter().collect();
    for head in [HeadVariant::Baseline, HeadVariant::Improved] {
        let cfg = ModelConfig { head, ..ModelConfig::default() };
        let params = ParamStore::init(&cfg, 52).unwrap();
        let anchors = AnchorSet::for_config(&cfg).unwrap();
        let (loss, grads) = batch_gradients(&cfg, &params, &anchors, &batch, &TrainConfig::default(), &mut rng(53)).unwrap();
        assert!(loss.total.is_finite());
        assert_eq!(grads.len(), params.len());
        for (name, g) in &grads {
            assert!(g.data().iter().any(|&x| x != 0.0), "{head}: {name} has zero gradient");
        }
    }
}

#[test]
fn training_is_deterministic_and_logs_additive_losses() {
    let scenes = small_scenes(3, 61);
    let cfg = small_model(HeadVariant::Improved);
    let tcfg = small_train();
    let mut seen = Vec::new();
    let a = train(&scenes, &tcfg, &cfg, |b| seen.push(*b)).unwrap();
    let b = train(&scenes, &tcfg, &cfg, |_| {}).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.batches, seen);
    assert_eq!(a.batches.len(), 2 * 2);
    assert_eq!(a.epochs.len(), 2);
    for bl in &a.batches {
        assert!((bl.loss.total - bl.loss.component_sum()).abs() <= 1e-12);
        assert!(bl.loss.components().iter().all(|&c| c >= 0.0));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batches.csv");
    write_batch_csv(&path, &a.batches).unwrap();
    assert_eq!(read_batch_csv(&path).unwrap(), a.batches);
    let loss_csv = dir.path().join("loss.csv");
    write_loss_csv(&loss_csv, &a.epochs).unwrap();
    let text = std::fs::read_to_string(&loss_csv).unwrap();
    assert!(text.starts_with("epoch,total,l_cls,l_bbox,l_mask\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let scenes = small_scenes(2, 71);
    let cfg = small_model(HeadVariant::Baseline);
    let tcfg = TrainConfig { learning_rate: 0.0, ..small_train() };
    let out = train(&scenes, &tcfg, &cfg, |_| {}).unwrap();
    assert_eq!(out.checkpoint.params, ParamStore::init(&cfg, tcfg.seed).unwrap());
}

#[test]
fn training_rejects_bad_input_and_reports_divergence() {
    let scenes = small_scenes(2, 81);
    let cfg = small_model(HeadVariant::Baseline);
    assert!(train(&[], &small_train(), &cfg, |_| {}).is_err());
    assert!(train(&scenes, &TrainConfig { epochs: 0, ..small_train() }, &cfg, |_| {}).is_err());
    let wrong = ModelConfig { image_size: 64, ..cfg.clone() };
    assert!(matches!(train(&scenes, &small_train(), &wrong, |_| {}), Err(Error::Dimension(_))));
    let wild = TrainConfig { learning_rate: 1e300, ..small_train() };
    assert!(matches!(train(&scenes, &wild, &cfg, |_| {}), Err(Error::Diverged { .. })));
    assert!(TrainConfig::from_kv("epochs=0").is_err());
    let t = TrainConfig { epochs: 5, seed: 99, ..TrainConfig::default() };
    assert_eq!(TrainConfig::from_kv(&t.to_kv()).unwrap(), t);
}

#[test]
fn inference_edge_cases() {
    let cfg = ModelConfig::default();
    let mut params = ParamStore::init(&cfg, 91).unwrap();
    params.get_mut("cls.logits.b").unwrap().data_mut()[0] = 20.0;
    let ck = Checkpoint { config: cfg.clone(), params };
    let zero = Tensor::zeros(&[1, 128, 128]);
    assert!(infer(&zero, &ck, 0.5, 0.5).unwrap().is_empty());

    let scene = &synth_generate(1, 92, &SceneConfig::default()).unwrap()[0].scene;
    let open = Checkpoint { config: cfg.clone(), params: ParamStore::init(&cfg, 93).unwrap() };
    assert!(infer(&scene.image, &open, 1.0, 0.5).unwrap().is_empty());
    let loose = infer(&scene.image, &open, 0.0, 0.5).unwrap();
    assert!(!loose.is_empty());
    for w in loose.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
    for d in &loose {
        assert!(d.class_id >= 1 && d.score > 0.0 && d.score <= 1.0);
        assert_eq!(d.mask_logits.shape(), &[56, 56]);
        assert_eq!(d.image_mask.as_ref().unwrap().dims(), [128, 128, 1]);
    }
    assert!(matches!(infer(&Tensor::zeros(&[1, 64, 64]), &open, 0.5, 0.5), Err(Error::Config(_))));
}
