use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::spatial::KdTree;

/// Unit in which boundary distances are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    Voxel,
    Mm,
}

impl fmt::Display for DistanceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Voxel => "voxel",
            Self::Mm => "mm",
        })
    }
}

impl FromStr for DistanceUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voxel" => Ok(Self::Voxel),
            "mm" => Ok(Self::Mm),
            _ => Err(Error::arg(format!("unknown distance unit {s:?} (expected voxel or mm)"))),
        }
    }
}

/// Points in grid coordinates together with the grid spacing, so they can
/// be measured either in voxels or in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    grid: Vec<[f64; 3]>,
    spacing: [f64; 3],
}

impl PointSet {
    /// Points with unit spacing: voxel and mm coordinates coincide.
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self::with_spacing(points, [1.0; 3])
    }

    pub fn with_spacing(grid: Vec<[f64; 3]>, spacing: [f64; 3]) -> Self {
        Self { grid, spacing }
    }

    /// Centers of the mask's boundary voxels.
    pub fn boundary_of(mask: &BinaryMask) -> Self {
        let grid = mask.boundary_voxels().into_iter().map(|i| mask.voxel_center(i, false)).collect();
        Self::with_spacing(grid, mask.spacing())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn grid(&self) -> &[[f64; 3]] {
        &self.grid
    }

    pub fn points(&self, unit: DistanceUnit) -> Vec<[f64; 3]> {
        match unit {
            DistanceUnit::Voxel => self.grid.clone(),
            DistanceUnit::Mm => {
                let s = self.spacing;
                self.grid.iter().map(|p| [p[0] * s[0], p[1] * s[1], p[2] * s[2]]).collect()
            }
        }
    }
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn directed_distances(from: &[[f64; 3]], to: &KdTree) -> Vec<f64> {
    from.iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect()
}

fn both_directions(a: &PointSet, b: &PointSet, unit: DistanceUnit) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("distance between point sets needs both sets nonempty".into()));
    }
    if unit == DistanceUnit::Voxel && a.spacing != b.spacing {
        return Err(Error::arg("voxel-unit distances need point sets on the same spacing"));
    }
    let pa = a.points(unit);
    let pb = b.points(unit);
    let ab = directed_distances(&pa, &KdTree::new(&pb));
    let ba = directed_distances(&pb, &KdTree::new(&pa));
    Ok((ab, ba))
}

/// Symmetric Hausdorff distance: the larger of the two directed maxima.
pub fn hausdorff(a: &PointSet, b: &PointSet, unit: DistanceUnit) -> Result<f64> {
    let (ab, ba) = both_directions(a, b, unit)?;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(max(&ab).max(max(&ba)))
}

/// The larger of the two directed mean nearest-neighbour distances.
pub fn average_hausdorff(a: &PointSet, b: &PointSet, unit: DistanceUnit) -> Result<f64> {
    let (ab, ba) = both_directions(a, b, unit)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&ab).max(mean(&ba)))
}
