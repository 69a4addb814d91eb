use crate::error::{Error, Result};

/// Split returned by [`otsu_threshold`]. Values falling in bins above `bin`
/// form the upper class; `threshold` is the boundary between the classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuSplit {
    pub bin: usize,
    pub threshold: f64,
    pub between_class_variance: f64,
    lo: f64,
    width: f64,
    bins: usize,
}

impl OtsuSplit {
    pub fn is_upper(&self, v: f64) -> bool {
        bin_of(v, self.lo, self.width, self.bins) > self.bin
    }
}

/// Otsu split of a histogram: the last bin `k` of the lower class.
///
/// Maximizes `w0 * w1 * (m0 - m1)^2 / n^2` over all splits with both classes
/// nonempty; the lowest `k` wins ties. Class sums are accumulated exactly in
/// integers. Returns `(k, between-class variance)`.
pub fn otsu_histogram(hist: &[u64]) -> Result<(usize, f64)> {
    let n: u128 = hist.iter().map(|&h| h as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &h)| i as u128 * h as u128).sum();
    let mut w0: u128 = 0;
    let mut s0: u128 = 0;
    let mut best: Option<(usize, f64)> = None;
    for (k, &h) in hist.iter().enumerate() {
        w0 += h as u128;
        s0 += k as u128 * h as u128;
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = s0 as f64 / w0 as f64;
        let m1 = (s - s0) as f64 / w1 as f64;
        let p0 = w0 as f64 / n as f64;
        let p1 = w1 as f64 / n as f64;
        let var = p0 * p1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((k, var));
        }
    }
    best.ok_or_else(|| Error::Degenerate("histogram has fewer than two occupied bins".into()))
}

/// Otsu threshold of raw intensities over a `bins`-bin histogram spanning
/// `[min, max]`. The threshold is the upper edge of the last lower-class bin.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<OtsuSplit> {
    if bins < 2 {
        return Err(Error::arg("otsu needs at least 2 bins"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("otsu input contains non-finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        return Err(Error::Degenerate("constant region has no separable classes".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[bin_of(v, lo, width, bins)] += 1;
    }
    let (bin, between_class_variance) = otsu_histogram(&hist)?;
    Ok(OtsuSplit {
        bin,
        threshold: lo + (bin + 1) as f64 * width,
        between_class_variance,
        lo,
        width,
        bins,
    })
}

fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((v - lo) / width) as usize).min(bins - 1)
}
