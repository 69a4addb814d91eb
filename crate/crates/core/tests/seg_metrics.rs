use std::collections::BTreeMap;

use imrk_core::seg_metrics::*;
use imrk_core::volume_io::{LabelTable, Volume};
use imrk_core::{BinaryMask, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut impl Rng, dims: [usize; 3], p: f64) -> BinaryMask {
    let n = dims.iter().product();
    BinaryMask::new(dims, [1.0; 3], (0..n).map(|_| rng.random_bool(p)).collect()).unwrap()
}

fn count_oracle(pred: &BinaryMask, gt: &BinaryMask) -> (u64, u64, u64, u64) {
    let [nx, ny, nz] = pred.dims();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                match (pred.get(x, y, z), gt.get(x, y, z)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    (tp, fp, fn_, tn)
}

#[test]
fn precision_examples() {
    let c = ConfusionCounts { tp: 3, fp: 1, fn_: 0, tn: 0 };
    assert_eq!(precision(&c).unwrap(), 0.75);
    let c = ConfusionCounts { tp: 5, fp: 0, fn_: 2, tn: 9 };
    assert_eq!(precision(&c).unwrap(), 1.0);
    let c = ConfusionCounts { tp: 0, fp: 0, fn_: 2, tn: 9 };
    assert!(matches!(precision(&c), Err(Error::Undefined(_))));
}

#[test]
fn counts_and_scores_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let dims = [rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..4)];
        let (pp, pg) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let pred = random_mask(&mut rng, dims, pp);
        let gt = random_mask(&mut rng, dims, pg);
        let (tp, fp, fn_, tn) = count_oracle(&pred, &gt);
        let c = ConfusionCounts::from_masks(&pred, &gt).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        assert_eq!(c.total(), pred.len() as u64);
        if tp + fp > 0 {
            assert_eq!(precision(&c).unwrap(), tp as f64 / (tp + fp) as f64);
        }
        let expected = if 2 * tp + fp + fn_ == 0 { 1.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        assert_eq!(dice(&pred, &gt).unwrap(), expected);
        assert_eq!(dice(&pred, &gt).unwrap(), dice(&gt, &pred).unwrap());
    }
}

#[test]
fn dice_examples() {
    let mut a = BinaryMask::image(4, 4);
    a.set(0, 0, 0, true);
    a.set(1, 0, 0, true);
    assert_eq!(dice(&a, &a).unwrap(), 1.0);
    let mut b = BinaryMask::image(4, 4);
    b.set(3, 3, 0, true);
    assert_eq!(dice(&a, &b).unwrap(), 0.0);
    let mut c = BinaryMask::image(4, 4);
    c.set(1, 0, 0, true);
    c.set(2, 0, 0, true);
    assert_eq!(dice(&a, &c).unwrap(), 0.5);
    let e = BinaryMask::image(4, 4);
    assert_eq!(dice(&e, &e).unwrap(), 1.0);
    assert!(dice(&a, &BinaryMask::image(4, 5)).is_err());
}

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0)])
        .collect()
}

fn nn_oracle(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            let mut best = f64::INFINITY;
            for b in to {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                if d < best {
                    best = d;
                }
            }
            best
        })
        .collect()
}

#[test]
fn hausdorff_examples() {
    let a = PointSet::new(vec![[0.0, 0.0, 0.0]]);
    let b = PointSet::new(vec![[3.0, 4.0, 0.0]]);
    assert_eq!(hausdorff(&a, &b, DistanceUnit::Voxel).unwrap(), 5.0);
    assert_eq!(hausdorff(&a, &a, DistanceUnit::Mm).unwrap(), 0.0);
    let line = PointSet::new(vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
    assert_eq!(average_hausdorff(&a, &line, DistanceUnit::Voxel).unwrap(), 5.0);
    assert_eq!(average_hausdorff(&line, &line, DistanceUnit::Voxel).unwrap(), 0.0);
    let empty = PointSet::new(vec![]);
    assert!(matches!(hausdorff(&a, &empty, DistanceUnit::Voxel), Err(Error::Empty(_))));
    assert!(average_hausdorff(&empty, &a, DistanceUnit::Voxel).is_err());
}

#[test]
fn hausdorff_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (na, nb) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let pa = random_points(&mut rng, na);
        let pb = random_points(&mut rng, nb);
        let ab = nn_oracle(&pa, &pb);
        let ba = nn_oracle(&pb, &pa);
        let hd = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ahd = mean(&ab).max(mean(&ba));
        let (a, b) = (PointSet::new(pa), PointSet::new(pb));
        let h = hausdorff(&a, &b, DistanceUnit::Voxel).unwrap();
        let g = average_hausdorff(&a, &b, DistanceUnit::Voxel).unwrap();
        assert!((h - hd).abs() <= 1e-10, "{h} vs {hd}");
        assert!((g - ahd).abs() <= 1e-10, "{g} vs {ahd}");
        assert_eq!(h, hausdorff(&b, &a, DistanceUnit::Voxel).unwrap());
        assert!(g <= h);
    }
}

#[test]
fn units_divide_out_spacing() {
    let a = PointSet::with_spacing(vec![[0.0, 0.0, 0.0]], [0.5, 0.5, 2.0]);
    let b = PointSet::with_spacing(vec![[0.0, 0.0, 3.0]], [0.5, 0.5, 2.0]);
    assert_eq!(hausdorff(&a, &b, DistanceUnit::Voxel).unwrap(), 3.0);
    assert_eq!(hausdorff(&a, &b, DistanceUnit::Mm).unwrap(), 6.0);
    let c = PointSet::with_spacing(vec![[1.0, 0.0, 0.0]], [1.0; 3]);
    assert!(hausdorff(&a, &c, DistanceUnit::Voxel).is_err());
    assert_eq!(hausdorff(&a, &c, DistanceUnit::Mm).unwrap(), 1.0);
}

#[test]
fn boundary_point_set_of_a_square() {
    let m = BinaryMask::from_fn([6, 6, 1], [1.0; 3], |x, y, _| (1..5).contains(&x) && (1..5).contains(&y));
    let p = PointSet::boundary_of(&m);
    assert_eq!(p.len(), 12);
    assert!(p.grid().iter().all(|q| q[0] == 1.0 || q[0] == 4.0 || q[1] == 1.0 || q[1] == 4.0));
}

fn square(dims: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
    BinaryMask::from_fn([dims, dims, 1], [1.0; 3], |x, y, _| {
        (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
    })
}

fn ap_oracle(flags: &[bool], n_gt: usize) -> f64 {
    let mut points = vec![];
    let mut tp = 0;
    for (k, &f) in flags.iter().enumerate() {
        tp += f as usize;
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        area += (r - prev) * best;
        prev = r;
    }
    area
}

#[test]
fn average_precision_toy_case() {
    let gts = [square(16, 0, 0, 4), square(16, 8, 0, 4), square(16, 0, 8, 4)];
    let noise = square(16, 12, 12, 3);
    let shifted = square(16, 8, 1, 4);
    let weak = square(16, 2, 10, 4);
    let dets = [(0.9, &gts[0]), (0.8, &noise), (0.7, &shifted), (0.6, &gts[0]), (0.5, &weak)];
    let refs: Vec<&BinaryMask> = gts.iter().collect();
    let ap = average_precision(&dets, &refs, 0.5).unwrap();
    assert!((ap - 5.0 / 9.0).abs() < 1e-15);
    assert_eq!(ap, ap_oracle(&[true, false, true, false, false], 3));

    let shuffled = [dets[3], dets[0], dets[4], dets[2], dets[1]];
    let perfect = [(0.9, &gts[0]), (0.8, &gts[1]), (0.7, &gts[2])];
    assert_eq!(average_precision(&perfect, &refs, 0.5).unwrap(), 1.0);
    assert_eq!(average_precision(&[(0.9, &noise)], &refs, 0.5).unwrap(), 0.0);
    assert_eq!(average_precision(&[], &refs, 0.5).unwrap(), 0.0);
    assert!(matches!(average_precision(&dets, &[], 0.5), Err(Error::Undefined(_))));
    assert!(average_precision(&shuffled, &refs, 0.5).unwrap() > 0.0);
}

#[test]
fn average_precision_matches_pr_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let gts: Vec<BinaryMask> = (0..rng.random_range(1..5))
            .map(|_| square(20, rng.random_range(0..14), rng.random_range(0..14), rng.random_range(2..6)))
            .collect();
        let dets: Vec<(f64, BinaryMask)> = (0..rng.random_range(0..7))
            .map(|_| {
                let m = square(20, rng.random_range(0..14), rng.random_range(0..14), rng.random_range(2..6));
                (rng.random::<f64>(), m)
            })
            .collect();
        let mut sorted: Vec<&(f64, BinaryMask)> = dets.iter().collect();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut used = vec![false; gts.len()];
        let mut flags = vec![];
        for (_, m) in sorted {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let inter = m.data().iter().zip(gt.data()).filter(|(a, b)| **a && **b).count();
                let uni = m.data().iter().zip(gt.data()).filter(|(a, b)| **a || **b).count();
                let iou = inter as f64 / uni as f64;
                if !used[g] && iou >= 0.5 && best.is_none_or(|b| iou > b.1) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            flags.push(best.is_some());
        }
        let refs: Vec<&BinaryMask> = gts.iter().collect();
        let d: Vec<(f64, &BinaryMask)> = dets.iter().map(|(s, m)| (*s, m)).collect();
        let ap = average_precision(&d, &refs, 0.5).unwrap();
        assert!((ap - ap_oracle(&flags, gts.len())).abs() < 1e-15);
    }
}

fn table(ids: &[(u16, &str)]) -> LabelTable {
    ids.iter().map(|(k, v)| (*k, v.to_string())).collect::<BTreeMap<_, _>>()
}

fn fluid(count: usize, dims: [usize; 3], spacing: [f64; 3], other: u16) -> Volume {
    let n: usize = dims.iter().product();
    let ids = (0..n).map(|i| if i < count { 4 } else if i % 2 == 0 { other } else { 0 }).collect();
    Volume::labels(dims, spacing, ids, table(&[(0, "background"), (1, "bone"), (3, "x"), (4, "effusion")])).unwrap()
}

#[test]
fn fluid_volume_examples() {
    assert_eq!(fluid_volume(&fluid(1000, [10, 10, 10], [1.0; 3], 0), 4).unwrap(), 1.0);
    let v = fluid_volume(&fluid(1000, [10, 10, 12], [0.91, 0.91, 3.0], 1), 4).unwrap();
    assert!((v - 2.4843).abs() < 1e-9, "{v}");
    assert_eq!(fluid_volume(&fluid(0, [4, 4, 4], [1.0; 3], 1), 4).unwrap(), 0.0);
    assert_eq!(fluid_volume(&fluid(10, [4, 4, 4], [1.0; 3], 1), 9).unwrap(), 0.0);
    let relabeled = fluid_volume(&fluid(1000, [10, 10, 12], [0.91, 0.91, 3.0], 3), 4).unwrap();
    assert_eq!(v, relabeled);
    let half = fluid_volume(&fluid(500, [10, 10, 12], [0.91, 0.91, 3.0], 1), 4).unwrap();
    assert!((2.0 * half - v).abs() < 1e-12);
    assert!(fluid_volume(&Volume::intensity([1, 1, 1], [1.0; 3], vec![0.0]).unwrap(), 4).is_err());
}

#[test]
fn cov_examples() {
    let same = VolumePairMeasurements::from_lists(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    let s = cov_and_differences(&same).unwrap();
    assert_eq!((s.cov, s.mean_abs_diff, s.sd_abs_diff), (0.0, 0.0, Some(0.0)));

    let one = cov_and_differences(&VolumePairMeasurements::new(vec![(2.0, 4.0)]).unwrap()).unwrap();
    assert!((one.cov - 2f64.sqrt() / 3.0).abs() < 1e-15);
    assert!((one.cov - 0.4714).abs() < 1e-4);
    assert_eq!(one.mean_abs_diff, 2.0);
    assert_eq!(one.sd_abs_diff, None);

    let with_zero = VolumePairMeasurements::new(vec![(0.0, 0.0), (2.0, 4.0)]).unwrap();
    let z = cov_and_differences(&with_zero).unwrap();
    assert_eq!((z.used, z.excluded), (1, 1));
    assert_eq!(z.cov, one.cov);
    assert!(cov_and_differences(&VolumePairMeasurements::new(vec![(0.0, 0.0)]).unwrap()).is_err());
    assert!(VolumePairMeasurements::new(vec![(-1.0, 2.0)]).is_err());
}

#[test]
fn cov_matches_formula_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..20.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..20.0)).collect();
        let s = cov_and_differences(&VolumePairMeasurements::from_lists(&a, &b).unwrap()).unwrap();
        let mut acc = 0.0;
        let mut diffs = vec![];
        for i in 0..n {
            let sd = (a[i] - b[i]).abs() / 2f64.sqrt();
            let m = (a[i] + b[i]) / 2.0;
            acc += (sd / m) * (sd / m);
            diffs.push((a[i] - b[i]).abs());
        }
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let sd = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((s.cov - (acc / n as f64).sqrt()).abs() < 1e-15);
        assert_eq!(s.mean_abs_diff, mean);
        assert!((s.sd_abs_diff.unwrap() - sd).abs() < 1e-12);

        let swapped = cov_and_differences(&VolumePairMeasurements::from_lists(&b, &a).unwrap()).unwrap();
        assert_eq!(swapped.cov, s.cov);
        let c = rng.random_range(0.01..100.0);
        let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
        let scaled = cov_and_differences(&VolumePairMeasurements::from_lists(&sa, &sb).unwrap()).unwrap();
        assert!((scaled.cov - s.cov).abs() <= 1e-12 * s.cov.max(1.0));
    }
}

fn otsu_oracle(hist: &[u64]) -> usize {
    let n: f64 = hist.iter().map(|&h| h as f64).sum();
    let mut best = (usize::MAX, -1.0);
    for t in 0..hist.len() {
        let (mut w0, mut w1, mut s0, mut s1) = (0u64, 0u64, 0u64, 0u64);
        for (i, &h) in hist.iter().enumerate() {
            if i <= t {
                w0 += h;
                s0 += i as u64 * h;
            } else {
                w1 += h;
                s1 += i as u64 * h;
            }
        }
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let (m0, m1) = (s0 as f64 / w0 as f64, s1 as f64 / w1 as f64);
        let var = (w0 as f64 / n) * (w1 as f64 / n) * (m0 - m1) * (m0 - m1);
        if var > best.1 {
            best = (t, var);
        }
    }
    best.0
}

#[test]
fn otsu_two_spikes() {
    let mut hist = vec![0u64; 256];
    hist[0] = 50;
    hist[255] = 50;
    let (k, _) = otsu_histogram(&hist).unwrap();
    assert_eq!(k, otsu_oracle(&hist));
    assert!(k < 255);

    let values: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 255.0 }).collect();
    let split = otsu_threshold(&values, 256).unwrap();
    assert!(split.threshold > 0.0 && split.threshold < 255.0);
    assert_eq!(values.iter().filter(|&&v| split.is_upper(v)).count(), 50);
}

#[test]
fn otsu_constant_region_is_an_error() {
    assert!(matches!(otsu_threshold(&[3.0; 20], 256), Err(Error::Degenerate(_))));
    let mut hist = vec![0u64; 16];
    hist[4] = 9;
    assert!(otsu_histogram(&hist).is_err());
}

#[test]
fn otsu_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let hist: Vec<u64> = (0..256).map(|_| if rng.random_bool(0.3) { rng.random_range(0..500) } else { 0 }).collect();
        if hist.iter().filter(|&&h| h > 0).count() < 2 {
            continue;
        }
        assert_eq!(otsu_histogram(&hist).unwrap().0, otsu_oracle(&hist));
    }
    let normal = rand_distr::Normal::new(0.0, 8.0).unwrap();
    let values: Vec<f64> = (0..4000)
        .map(|i| rng.sample(normal) + if i % 3 == 0 { 200.0 } else { 60.0 })
        .collect();
    let split = otsu_threshold(&values, 256).unwrap();
    assert!(split.threshold > 60.0 && split.threshold < 200.0, "{}", split.threshold);
    for (i, &v) in values.iter().enumerate() {
        assert_eq!(split.is_upper(v), i % 3 == 0);
    }
}

proptest! {
    #[test]
    fn hausdorff_is_symmetric_and_dominates_average(
        a in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..15),
        b in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..15),
    ) {
        let (a, b) = (PointSet::new(a), PointSet::new(b));
        let h = hausdorff(&a, &b, DistanceUnit::Mm).unwrap();
        prop_assert_eq!(h, hausdorff(&b, &a, DistanceUnit::Mm).unwrap());
        prop_assert!(average_hausdorff(&a, &b, DistanceUnit::Mm).unwrap() <= h);
    }
}
