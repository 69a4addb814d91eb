//! File formats: raw voxel volumes with a text sidecar header, per-scene
//! annotation lists, and metric reports.
//!
//! All numbers written as text use [`fmt_f64`] (17 significant digits), so
//! every value re-parses to the identical bit pattern.

mod annotations;
mod report;
mod volume;

pub use annotations::{read_annotations, write_annotations, Annotation};
pub use report::{read_report, write_report, ReportFormat};
pub use volume::{read_volume, read_volume_with, write_volume, LabelTable, ReadOptions, Volume, VolumeKind, Voxels};

/// Fixed scientific formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_formatting_round_trips() {
        for v in [0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 2.4843e-7, f64::MAX, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(parse_f64(&s).unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }
}
