use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cylinder::CylinderModel;
use super::surface::{MeanSd, SurfaceSet};
use crate::error::{Error, Result};
use crate::seg_metrics::directed_distances;
use crate::spatial::KdTree;
use crate::volume_io::fmt_f64;

/// One column per degree.
pub const ANGLE_BINS: usize = 360;
pub const DEFAULT_MAX_THICKNESS_MM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    GroundTruth,
    Prediction,
    Difference,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GroundTruth => "gt",
            Self::Prediction => "prediction",
            Self::Difference => "difference",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gt" => Some(Self::GroundTruth),
            "prediction" => Some(Self::Prediction),
            "difference" => Some(Self::Difference),
            _ => None,
        }
    }
}

/// Thickness (mm) on an angle x slice grid; `None` marks bins with no sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ThicknessMap {
    n_slices: usize,
    values: Vec<Option<f64>>,
    provenance: Provenance,
    spacing: [f64; 3],
}

impl ThicknessMap {
    pub fn empty(n_slices: usize, provenance: Provenance, spacing: [f64; 3]) -> Self {
        Self {
            n_slices,
            values: vec![None; n_slices * ANGLE_BINS],
            provenance,
            spacing,
        }
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn get(&self, angle: usize, slice: usize) -> Option<f64> {
        self.values[slice * ANGLE_BINS + angle]
    }

    pub fn set(&mut self, angle: usize, slice: usize, v: Option<f64>) {
        self.values[slice * ANGLE_BINS + angle] = v;
    }

    /// Values of covered bins, slice by slice, angle by angle.
    pub fn covered(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn covered_stats(&self) -> Option<MeanSd> {
        MeanSd::of(&self.covered())
    }
}

/// Distance from each inner surface point to the nearest outer point (mm).
pub fn thickness_samples(inner: &SurfaceSet, outer: &SurfaceSet) -> Result<Vec<f64>> {
    if inner.is_empty() || outer.is_empty() {
        return Err(Error::Empty("thickness needs nonempty inner and outer surfaces".into()));
    }
    Ok(directed_distances(&inner.points_mm(), &KdTree::new(&outer.points_mm())))
}

/// Bins per-point thickness by whole degree around the cylinder axis and by
/// acquisition slice (the z index of the point's voxel). Each bin holds the
/// mean of its samples; samples above `max_mm` or beyond `n_slices` are dropped.
pub fn flatten_radial(
    inner: &SurfaceSet,
    samples: &[f64],
    cylinder: &CylinderModel,
    n_slices: usize,
    provenance: Provenance,
    max_mm: f64,
) -> Result<ThicknessMap> {
    if samples.len() != inner.len() {
        return Err(Error::dim(format!("{} samples for {} surface points", samples.len(), inner.len())));
    }
    let mut sums = vec![(0.0, 0usize); n_slices * ANGLE_BINS];
    let pts = inner.points_mm();
    let mut dropped = 0usize;
    for ((p, &voxel), &t) in pts.iter().zip(inner.voxels()).zip(samples) {
        let slice = inner.occupancy().coords(voxel)[2];
        if slice >= n_slices || !(0.0..=max_mm).contains(&t) {
            dropped += 1;
            continue;
        }
        let angle = (cylinder.angle_deg(p).floor() as usize).min(ANGLE_BINS - 1);
        let s = &mut sums[slice * ANGLE_BINS + angle];
        s.0 += t;
        s.1 += 1;
    }
    if dropped > 0 {
        log::debug!("{dropped} thickness samples outside the map or above {max_mm} mm");
    }
    let mut map = ThicknessMap::empty(n_slices, provenance, inner.points().spacing());
    for (v, (sum, n)) in map.values.iter_mut().zip(sums) {
        if n > 0 {
            *v = Some(sum / n as f64);
        }
    }
    Ok(map)
}

/// Per-bin `a - b` where both maps are covered, plus summary statistics over
/// those bins (`None` when no bin is covered by both).
pub fn thickness_diff(a: &ThicknessMap, b: &ThicknessMap) -> Result<(ThicknessMap, Option<MeanSd>)> {
    if a.n_slices != b.n_slices {
        return Err(Error::dim(format!("thickness maps have {} and {} slices", a.n_slices, b.n_slices)));
    }
    let mut out = ThicknessMap::empty(a.n_slices, Provenance::Difference, a.spacing);
    for (o, (x, y)) in out.values.iter_mut().zip(a.values.iter().zip(&b.values)) {
        if let (Some(x), Some(y)) = (x, y) {
            *o = Some(x - y);
        }
    }
    let stats = out.covered_stats();
    Ok((out, stats))
}

/// CSV grid: a comment line with provenance and spacing, a header of angle
/// columns, then one row per slice. Empty cells are uncovered bins.
pub fn write_thickness_csv(map: &ThicknessMap, path: &Path) -> Result<()> {
    let mut out = String::new();
    let [sx, sy, sz] = map.spacing;
    writeln!(
        out,
        "# thickness_mm provenance={} angle_bins={ANGLE_BINS} slices={} spacing_mm={},{},{}",
        map.provenance.as_str(),
        map.n_slices,
        fmt_f64(sx),
        fmt_f64(sy),
        fmt_f64(sz)
    )
    .unwrap();
    out.push_str("slice");
    for a in 0..ANGLE_BINS {
        write!(out, ",{a}").unwrap();
    }
    out.push('\n');
    for s in 0..map.n_slices {
        write!(out, "{s}").unwrap();
        for a in 0..ANGLE_BINS {
            out.push(',');
            if let Some(v) = map.get(a, s) {
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_thickness_csv(path: &Path) -> Result<ThicknessMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format(path, d.to_string());
    let mut lines = text.lines();
    let meta = lines.next().and_then(|l| l.strip_prefix("# thickness_mm ")).ok_or_else(|| bad("missing comment header"))?;
    let mut provenance = None;
    let mut slices = None;
    let mut spacing = None;
    for kv in meta.split_whitespace() {
        match kv.split_once('=') {
            Some(("provenance", v)) => provenance = Provenance::parse(v),
            Some(("slices", v)) => slices = v.parse::<usize>().ok(),
            Some(("spacing_mm", v)) => {
                let s: Vec<f64> = v.split(',').filter_map(|x| x.parse().ok()).collect();
                spacing = <[f64; 3]>::try_from(s).ok();
            }
            Some(("angle_bins", v)) if v != ANGLE_BINS.to_string() => return Err(bad("angle_bins must be 360")),
            _ => {}
        }
    }
    let (Some(provenance), Some(n_slices), Some(spacing)) = (provenance, slices, spacing) else {
        return Err(bad("incomplete comment header"));
    };
    lines.next().ok_or_else(|| bad("missing column header"))?;
    let mut map = ThicknessMap::empty(n_slices, provenance, spacing);
    let mut rows = 0;
    for (s, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if s >= n_slices || cells.len() != ANGLE_BINS + 1 || cells[0] != s.to_string() {
            return Err(bad(&format!("malformed row {s}")));
        }
        for (a, c) in cells[1..].iter().enumerate() {
            if !c.is_empty() {
                map.set(a, s, Some(c.parse().map_err(|_| bad(&format!("bad value {c:?}")))?));
            }
        }
        rows += 1;
    }
    if rows != n_slices {
        return Err(bad(&format!("expected {n_slices} rows, found {rows}")));
    }
    Ok(map)
}

/// Value range mapped onto the grey levels of a PGM render.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgmRange {
    pub min: f64,
    pub max: f64,
}

/// Binary PGM, 360 columns x one row per slice. Uncovered bins are 0; covered
/// bins map linearly from `[min, max]` of the covered values onto 1..=255
/// (a constant map renders as 255). The range is written as a comment.
pub fn write_thickness_pgm(map: &ThicknessMap, path: &Path) -> Result<Option<PgmRange>> {
    let covered = map.covered();
    let range = (!covered.is_empty()).then(|| PgmRange {
        min: covered.iter().copied().fold(f64::INFINITY, f64::min),
        max: covered.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    let mut out = Vec::new();
    let comment = match range {
        Some(r) => format!("# min_mm={} max_mm={} sentinel=0", fmt_f64(r.min), fmt_f64(r.max)),
        None => "# empty sentinel=0".to_string(),
    };
    out.extend_from_slice(format!("P5\n{comment}\n{ANGLE_BINS} {}\n255\n", map.n_slices).as_bytes());
    for v in &map.values {
        out.push(match (v, range) {
            (Some(v), Some(r)) if r.max > r.min => 1 + ((v - r.min) / (r.max - r.min) * 254.0).round() as u8,
            (Some(_), _) => 255,
            (None, _) => 0,
        });
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(range)
}
