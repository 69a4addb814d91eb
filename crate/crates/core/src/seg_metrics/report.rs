use serde::{Deserialize, Serialize};

use super::distance::DistanceUnit;
use super::volumetry::{cov_and_differences, VolumePairMeasurements};
use crate::error::{Error, Result};

/// One row of the per-class evaluation table. `None` marks an undefined
/// value (no predictions, empty boundary, no ground truth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub dice: Option<f64>,
    pub precision: Option<f64>,
    pub hausdorff: Option<f64>,
    pub avg_hausdorff: Option<f64>,
    pub ap: Option<f64>,
    pub unit: DistanceUnit,
}

/// Pairwise agreement between raters or methods measuring the same subjects.
///
/// Matrices are indexed `[row][col]` in `names` order and are symmetric;
/// the diagonal compares a rater with itself and is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovTable {
    pub names: Vec<String>,
    pub volume_mean: Vec<f64>,
    pub volume_sd: Vec<Option<f64>>,
    pub cov: Vec<Vec<f64>>,
    pub diff_mean: Vec<Vec<f64>>,
    pub diff_sd: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub cov: Option<CovTable>,
}

fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.len() >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

/// Builds the pairwise table from one volume list (mL, subject-aligned) per rater.
pub fn cov_table(names: Vec<String>, volumes: &[Vec<f64>]) -> Result<CovTable> {
    if names.len() != volumes.len() || names.len() < 2 {
        return Err(Error::arg("cov table needs at least two named volume lists"));
    }
    let subjects = volumes[0].len();
    if subjects == 0 || volumes.iter().any(|v| v.len() != subjects) {
        return Err(Error::dim("volume lists must be nonempty and equally long"));
    }
    let r = names.len();
    let mut cov = vec![vec![0.0; r]; r];
    let mut diff_mean = vec![vec![0.0; r]; r];
    let mut diff_sd = vec![vec![(subjects >= 2).then_some(0.0); r]; r];
    for i in 0..r {
        for j in i + 1..r {
            let s = cov_and_differences(&VolumePairMeasurements::from_lists(&volumes[i], &volumes[j])?)?;
            cov[i][j] = s.cov;
            cov[j][i] = s.cov;
            diff_mean[i][j] = s.mean_abs_diff;
            diff_mean[j][i] = s.mean_abs_diff;
            diff_sd[i][j] = s.sd_abs_diff;
            diff_sd[j][i] = s.sd_abs_diff;
        }
    }
    let (volume_mean, volume_sd) = volumes.iter().map(|v| mean_sd(v)).unzip();
    Ok(CovTable {
        names,
        volume_mean,
        volume_sd,
        cov,
        diff_mean,
        diff_sd,
    })
}
