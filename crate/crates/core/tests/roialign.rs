use imrk_core::roialign::{roi_align, roi_align_pair, roi_align_tensor};
use imrk_core::{grad_check, RoiAlignConfig, RoiBox, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct bilinear interpolation at a continuous (y, x) position using the
/// half-pixel convention, with neighbour indices clamped to the border.
fn bilinear(f: &Tensor, c: usize, y: f64, x: f64) -> f64 {
    let (h, w) = (f.shape()[1] as isize, f.shape()[2] as isize);
    let (v, u) = (y - 0.5, x - 0.5);
    let (y0, x0) = (v.floor() as isize, u.floor() as isize);
    let (dy, dx) = (v - y0 as f64, u - x0 as f64);
    let at = |yy: isize, xx: isize| {
        let yy = yy.clamp(0, h - 1) as usize;
        let xx = xx.clamp(0, w - 1) as usize;
        f.data()[(c * h as usize + yy) * w as usize + xx]
    };
    (1.0 - dy) * (1.0 - dx) * at(y0, x0)
        + (1.0 - dy) * dx * at(y0, x0 + 1)
        + dy * (1.0 - dx) * at(y0 + 1, x0)
        + dy * dx * at(y0 + 1, x0 + 1)
}

/// Enumerates every sample point of every bin.
fn oracle(f: &Tensor, roi: &RoiBox, out: usize, ratio: usize) -> Vec<f64> {
    let (c, h, w) = f.chw().unwrap();
    let (y1, x1) = (roi.y1 * h as f64, roi.x1 * w as f64);
    let bh = (roi.y2 * h as f64 - y1) / out as f64;
    let bw = (roi.x2 * w as f64 - x1) / out as f64;
    let mut res = Vec::new();
    for ch in 0..c {
        for i in 0..out {
            for j in 0..out {
                let mut acc = 0.0;
                for a in 0..ratio {
                    for b in 0..ratio {
                        let y = y1 + bh * (i as f64 + (a as f64 + 0.5) / ratio as f64);
                        let x = x1 + bw * (j as f64 + (b as f64 + 0.5) / ratio as f64);
                        acc += bilinear(f, ch, y, x);
                    }
                }
                res.push(acc / (ratio * ratio) as f64);
            }
        }
    }
    res
}

fn random_roi(r: &mut ChaCha8Rng) -> RoiBox {
    let (a, b) = (r.random_range(0.0..1.0f64), r.random_range(0.0..1.0f64));
    let (c, d) = (r.random_range(0.0..1.0f64), r.random_range(0.0..1.0f64));
    let (y1, y2) = (a.min(b), a.max(b).max(a.min(b) + 0.02).min(1.0));
    let (x1, x2) = (c.min(d), c.max(d).max(c.min(d) + 0.02).min(1.0));
    RoiBox::new(y1, x1, y2, x2).unwrap()
}

#[test]
fn identity_configuration_reproduces_input() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let f = Tensor::randn(&[3, 8, 8], 1.0, &mut r);
    let full = RoiBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let out = roi_align_tensor(&f, &full, 8, 1).unwrap();
    assert_eq!(out, f);
}

#[test]
fn constant_map_gives_constant_output() {
    let f = Tensor::full(&[2, 7, 9], 4.25);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let roi = random_roi(&mut r);
        let out = roi_align_tensor(&f, &roi, 5, 2).unwrap();
        assert!(out.data().iter().all(|&v| (v - 4.25).abs() < 1e-12));
    }
}

#[test]
fn matches_bilinear_enumeration_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let f = Tensor::randn(&[3, 8, 8], 1.0, &mut r);
        let roi = random_roi(&mut r);
        let out = [2usize, 4, 14][case % 3];
        let ratio = 1 + case % 3;
        let got = roi_align_tensor(&f, &roi, out, ratio).unwrap();
        let want = oracle(&f, &roi, out, ratio);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn snapped_roi_reproduces_cell_values() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let f = Tensor::randn(&[1, 8, 8], 1.0, &mut r);
    let roi = RoiBox::new(2.0 / 8.0, 1.0 / 8.0, 6.0 / 8.0, 5.0 / 8.0).unwrap();
    let out = roi_align_tensor(&f, &roi, 4, 1).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = f.data()[(i + 2) * 8 + (j + 1)];
            assert!((out.data()[i * 4 + j] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn padding_outside_footprint_does_not_change_output() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let f = Tensor::randn(&[2, 10, 10], 1.0, &mut r);
    // interior ROI: pixel extent [2.3, 7.1] x [1.9, 8.2]
    let roi = RoiBox::new(0.23, 0.19, 0.71, 0.82).unwrap();
    let base = roi_align_tensor(&f, &roi, 6, 2).unwrap();
    let pad = 3;
    let n = 10 + 2 * pad;
    let mut padded = vec![0.0; 2 * n * n];
    for c in 0..2 {
        for y in 0..10 {
            for x in 0..10 {
                padded[(c * n + y + pad) * n + x + pad] = f.data()[(c * 10 + y) * 10 + x];
            }
        }
    }
    let padded = Tensor::new([2, n, n], padded).unwrap();
    let shift = |v: f64| (v * 10.0 + pad as f64) / n as f64;
    let roi_p = RoiBox::new(shift(roi.y1), shift(roi.x1), shift(roi.y2), shift(roi.x2)).unwrap();
    let moved = roi_align_tensor(&padded, &roi_p, 6, 2).unwrap();
    for (a, b) in base.data().iter().zip(moved.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pair_block_average_matches_small_on_linear_ramp() {
    let n = 16;
    let ramp: Vec<f64> = (0..n * n)
        .map(|i| 0.3 * (i / n) as f64 - 0.7 * (i % n) as f64 + 2.0)
        .collect();
    let f = Tensor::new([1, n, n], ramp).unwrap();
    // all samples stay within [0.5, n - 0.5], so no clamping
    let roi = RoiBox::new(0.1, 0.15, 0.85, 0.9).unwrap();
    let cfg = RoiAlignConfig::default();
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let (s, l) = roi_align_pair(&mut tape, fv, &roi, &cfg).unwrap();
    let (small, large) = (tape.value(s).clone(), tape.value(l).clone());
    assert_eq!(small.shape(), &[1, 14, 14]);
    assert_eq!(large.shape(), &[1, 56, 56]);
    for i in 0..14 {
        for j in 0..14 {
            let mut acc = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    acc += large.data()[(4 * i + a) * 56 + 4 * j + b];
                }
            }
            assert!((acc / 16.0 - small.data()[i * 14 + j]).abs() < 1e-9);
        }
    }
    // compositional consistency with independent single-resolution calls
    assert_eq!(small, roi_align_tensor(&f, &roi, 14, 2).unwrap());
    assert_eq!(large, roi_align_tensor(&f, &roi, 56, 2).unwrap());
}

#[test]
fn pair_on_constant_map_is_constant_and_equal() {
    let f = Tensor::full(&[3, 8, 8], -1.5);
    let roi = RoiBox::new(0.05, 0.4, 0.95, 0.6).unwrap();
    let mut tape = Tape::new();
    let fv = tape.constant(f);
    let (s, l) = roi_align_pair(&mut tape, fv, &roi, &RoiAlignConfig::default()).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| (v + 1.5).abs() < 1e-12));
    assert!(tape.value(l).data().iter().all(|&v| (v + 1.5).abs() < 1e-12));
}

#[test]
fn gradient_passes_finite_difference_check() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let f = Tensor::randn(&[2, 8, 8], 1.0, &mut r);
        let roi = random_roi(&mut r);
        let check = grad_check(|t, v| roi_align(t, v[0], &roi, 4, 2), &[f], 1e-5).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
    }
}

/// Quantized ROI pooling, kept only to show the misalignment ROIAlign removes.
fn roi_pool_quantized(f: &Tensor, roi: &RoiBox, out: usize) -> Vec<f64> {
    let (_, h, w) = f.chw().unwrap();
    let y1 = (roi.y1 * h as f64).round() as usize;
    let x1 = (roi.x1 * w as f64).round() as usize;
    let y2 = ((roi.y2 * h as f64).round() as usize).max(y1 + 1);
    let x2 = ((roi.x2 * w as f64).round() as usize).max(x1 + 1);
    let (bh, bw) = ((y2 - y1) as f64 / out as f64, (x2 - x1) as f64 / out as f64);
    let mut res = Vec::new();
    for i in 0..out {
        for j in 0..out {
            let ys = y1 + (i as f64 * bh).floor() as usize;
            let ye = (y1 + ((i + 1) as f64 * bh).ceil() as usize).min(h);
            let xs = x1 + (j as f64 * bw).floor() as usize;
            let xe = (x1 + ((j + 1) as f64 * bw).ceil() as usize).min(w);
            let mut m = f64::NEG_INFINITY;
            for y in ys..ye {
                for x in xs..xe {
                    m = m.max(f.data()[y * w + x]);
                }
            }
            res.push(m);
        }
    }
    res
}

#[test]
fn quantized_pooling_misaligns_where_roialign_is_exact() {
    // f(x) equals the continuous x coordinate of each cell center
    let n = 10;
    let data: Vec<f64> = (0..n * n).map(|i| (i % n) as f64 + 0.5).collect();
    let f = Tensor::new([1, n, n], data).unwrap();
    let roi = RoiBox::new(0.2, 0.13, 0.6, 0.53).unwrap();
    let aligned = roi_align_tensor(&f, &roi, 4, 1).unwrap();
    let pooled = roi_pool_quantized(&f, &roi, 4);
    let mut worst_pool: f64 = 0.0;
    for j in 0..4 {
        let center = 1.3 + (j as f64 + 0.5);
        assert!((aligned.data()[j] - center).abs() < 1e-12);
        worst_pool = worst_pool.max((pooled[j] - center).abs());
    }
    assert!(worst_pool > 0.2, "pooling error {worst_pool}");
}
