use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::seg_metrics::{DistanceUnit, PointSet};
use crate::spatial::KdTree;
use crate::volume_io::Volume;

/// Which interface of a tissue a surface belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceSide {
    /// Towards the adjacent tissue (bone-cartilage interface).
    Inner,
    /// Towards everything else (articular surface).
    Outer,
}

/// Samples of a tissue boundary: voxel centers for whole-mask surfaces,
/// face centers for the interfaces returned by [`extract_surfaces`].
///
/// Each point remembers the tissue voxel it belongs to, and the set keeps the
/// tissue occupancy so distances to it can be signed.
#[derive(Clone, Debug)]
pub struct SurfaceSet {
    points: PointSet,
    voxels: Vec<usize>,
    side: Option<SurfaceSide>,
    occupancy: BinaryMask,
}

const STEPS: [[f64; 3]; 6] = [
    [-0.5, 0.0, 0.0],
    [0.5, 0.0, 0.0],
    [0.0, -0.5, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.0, -0.5],
    [0.0, 0.0, 0.5],
];

impl SurfaceSet {
    /// Centers of tissue voxels with a non-tissue face neighbour.
    pub fn of_mask(mask: &BinaryMask) -> Self {
        let voxels: Vec<usize> = (0..mask.len())
            .filter(|&i| mask.data()[i] && mask.neighbors6(i).iter().flatten().any(|&j| !mask.data()[j]))
            .collect();
        let grid = voxels.iter().map(|&i| mask.voxel_center(i, false)).collect();
        SurfaceSet {
            points: PointSet::with_spacing(grid, mask.spacing()),
            voxels,
            side: None,
            occupancy: mask.clone(),
        }
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    /// Points in millimetres.
    pub fn points_mm(&self) -> Vec<[f64; 3]> {
        self.points.points(DistanceUnit::Mm)
    }

    /// Index of the tissue voxel each point sits on.
    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn side(&self) -> Option<SurfaceSide> {
        self.side
    }

    pub fn occupancy(&self) -> &BinaryMask {
        &self.occupancy
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

fn collect(
    mask: &BinaryMask,
    side: Option<SurfaceSide>,
    keep: impl Fn(usize, usize) -> bool,
) -> SurfaceSet {
    let mut grid = Vec::new();
    let mut voxels = Vec::new();
    for i in 0..mask.len() {
        if !mask.data()[i] {
            continue;
        }
        let c = mask.voxel_center(i, false);
        for (k, n) in mask.neighbors6(i).into_iter().enumerate() {
            if n.is_some_and(|j| keep(i, j)) {
                let s = STEPS[k];
                grid.push([c[0] + s[0], c[1] + s[1], c[2] + s[2]]);
                voxels.push(i);
            }
        }
    }
    SurfaceSet {
        points: PointSet::with_spacing(grid, mask.spacing()),
        voxels,
        side,
        occupancy: mask.clone(),
    }
}

/// Splits the boundary of `tissue` into faces touching `adjacent` (inner)
/// and faces touching any other label (outer). Sampling at faces rather than
/// voxel centers keeps inner-to-outer distances free of a one-voxel bias.
pub fn extract_surfaces(labels: &Volume, tissue: u16, adjacent: u16) -> Result<(SurfaceSet, SurfaceSet)> {
    let ids = labels
        .label_ids()
        .ok_or_else(|| Error::arg("surface extraction needs a label volume"))?;
    let mask = labels.mask_of(tissue);
    if mask.count() == 0 {
        return Err(Error::Empty(format!("tissue label {tissue} is absent")));
    }
    let inner = collect(&mask, Some(SurfaceSide::Inner), |_, j| ids[j] == adjacent);
    let outer = collect(&mask, Some(SurfaceSide::Outer), |_, j| ids[j] != adjacent && ids[j] != tissue);
    if inner.is_empty() && outer.is_empty() {
        return Err(Error::Empty(format!("tissue label {tissue} has no surface inside the grid")));
    }
    Ok((inner, outer))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            sd: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Nearest predicted-surface distance (mm) from every ground-truth surface
/// point. With `signed`, a distance is negative when the matched predicted
/// point sits on a voxel inside the ground-truth tissue (under-segmentation).
pub fn surface_distance_stats(gt: &SurfaceSet, pred: &SurfaceSet, signed: bool) -> Result<MeanSd> {
    if gt.is_empty() || pred.is_empty() {
        return Err(Error::Empty("surface distance needs two nonempty surfaces".into()));
    }
    if signed {
        gt.occupancy.same_grid(&pred.occupancy)?;
    }
    let tree = KdTree::new(&pred.points_mm());
    let d: Vec<f64> = gt
        .points_mm()
        .iter()
        .map(|p| {
            let (j, d2) = tree.nearest(p).expect("nonempty");
            let d = d2.sqrt();
            if signed && d > 0.0 && gt.occupancy.data()[pred.voxels[j]] {
                -d
            } else {
                d
            }
        })
        .collect();
    Ok(MeanSd::of(&d).expect("nonempty"))
}
