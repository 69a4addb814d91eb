use crate::error::{Error, Result};
use crate::volume_io::Volume;

/// Volume in millilitres of all voxels carrying `label`.
///
/// A label missing from the volume's label table yields 0 and a warning,
/// since it usually means the label numbering does not match.
pub fn fluid_volume(v: &Volume, label: u16) -> Result<f64> {
    let ids = v
        .label_ids()
        .ok_or_else(|| Error::arg("fluid volume needs a label volume"))?;
    if !v.label_table().contains_key(&label) {
        log::warn!("label {label} is not declared in the volume's label table; volume reported as 0");
        return Ok(0.0);
    }
    let count = ids.iter().filter(|&&id| id == label).count();
    let [sx, sy, sz] = v.spacing();
    Ok(count as f64 * (sx * sy * sz) / 1000.0)
}

/// Paired volumes (mL) of the same subjects from two raters or methods.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumePairMeasurements {
    pairs: Vec<(f64, f64)>,
}

impl VolumePairMeasurements {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|(a, b)| !(*a >= 0.0 && *b >= 0.0 && a.is_finite() && b.is_finite())) {
            return Err(Error::arg(format!("volumes must be finite and non-negative, got {p:?}")));
        }
        Ok(Self { pairs })
    }

    pub fn from_lists(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::dim(format!("volume lists differ in length: {} vs {}", a.len(), b.len())));
        }
        Self::new(a.iter().copied().zip(b.iter().copied()).collect())
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovSummary {
    /// Root-mean-square of the per-subject coefficients of variation.
    pub cov: f64,
    pub mean_abs_diff: f64,
    /// Sample standard deviation of `|a - b|`; needs two subjects.
    pub sd_abs_diff: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

/// Agreement between paired volumes.
///
/// Per subject `sd = |a - b| / sqrt(2)` and `mean = (a + b) / 2`; the CoV is
/// `sqrt(mean_i((sd_i / mean_i)^2))`. Subjects whose mean is zero are skipped
/// with a warning.
pub fn cov_and_differences(m: &VolumePairMeasurements) -> Result<CovSummary> {
    let mut sq_sum = 0.0;
    let mut diffs = Vec::with_capacity(m.pairs.len());
    let mut excluded = 0;
    for &(a, b) in &m.pairs {
        let mean = (a + b) / 2.0;
        if mean == 0.0 {
            excluded += 1;
            continue;
        }
        let d = (a - b).abs();
        let ratio = (d / std::f64::consts::SQRT_2) / mean;
        sq_sum += ratio * ratio;
        diffs.push(d);
    }
    if excluded > 0 {
        log::warn!("{excluded} subject(s) with zero mean volume excluded from CoV");
    }
    if diffs.is_empty() {
        return Err(Error::Empty("no subject with a positive mean volume".into()));
    }
    let n = diffs.len() as f64;
    let mean_abs_diff = diffs.iter().sum::<f64>() / n;
    let sd_abs_diff = (diffs.len() >= 2)
        .then(|| (diffs.iter().map(|d| (d - mean_abs_diff).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Ok(CovSummary {
        cov: (sq_sum / n).sqrt(),
        mean_abs_diff,
        sd_abs_diff,
        used: diffs.len(),
        excluded,
    })
}
