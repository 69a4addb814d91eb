//! Segmentation and detection metrics: overlap, boundary distances, average
//! precision, effusion volumetry, paired-volume agreement and Otsu labeling.

mod ap;
mod distance;
mod overlap;
mod otsu;
mod report;
mod volumetry;

pub use ap::{average_precision, mask_iou};
pub use distance::{average_hausdorff, directed_distances, hausdorff, DistanceUnit, PointSet};
pub use otsu::{otsu_histogram, otsu_threshold, OtsuSplit};
pub use overlap::{dice, dice_counts, precision, ConfusionCounts};
pub use report::{cov_table, ClassMetrics, CovTable, MetricsReport};
pub use volumetry::{cov_and_differences, fluid_volume, CovSummary, VolumePairMeasurements};
