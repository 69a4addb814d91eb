//! Cartilage geometry on label volumes: tissue surfaces, surface distances,
//! cylinder axis fitting and flattened angle-by-slice thickness maps.
//!
//! Tissue interfaces are sampled at voxel face centers, halfway between a
//! tissue voxel and a differing neighbour, so a one-voxel slab has its two
//! faces exactly one spacing apart. Whole-mask surfaces used for
//! prediction-versus-truth distances are boundary voxel centers. In both
//! cases the grid border does not count as surface: the true surface there
//! lies outside the field of view.

mod cylinder;
mod surface;
mod thickness;

pub use cylinder::{fit_cylinder_axis, AxisConstraint, CylinderModel};
pub use surface::{extract_surfaces, surface_distance_stats, MeanSd, SurfaceSet, SurfaceSide};
pub use thickness::{
    flatten_radial, read_thickness_csv, thickness_diff, thickness_samples, write_thickness_csv, write_thickness_pgm,
    PgmRange, Provenance, ThicknessMap, ANGLE_BINS, DEFAULT_MAX_THICKNESS_MM,
};

use crate::classes::{BACKGROUND, CARTILAGE, FEMUR};
use crate::volume_io::Volume;

/// Label volume of a bone cylinder (radius `inner_mm`) wrapped in a cartilage
/// shell out to `outer_mm`, axis along z through the grid center, classified
/// by voxel-center radius. The grid leaves at least two background voxels
/// around the shell.
pub fn cylinder_shell_phantom(inner_mm: f64, outer_mm: f64, spacing_mm: f64, n_slices: usize) -> Volume {
    let n = (2.0 * outer_mm / spacing_mm).ceil() as usize + 4;
    let c = (n - 1) as f64 / 2.0 * spacing_mm;
    let mut ids = Vec::with_capacity(n * n * n_slices);
    for _z in 0..n_slices {
        for y in 0..n {
            for x in 0..n {
                let r = (x as f64 * spacing_mm - c).hypot(y as f64 * spacing_mm - c);
                ids.push(if r < inner_mm {
                    FEMUR
                } else if r < outer_mm {
                    CARTILAGE
                } else {
                    BACKGROUND
                });
            }
        }
    }
    Volume::labels([n, n, n_slices], [spacing_mm; 3], ids, crate::classes::label_table()).expect("valid phantom")
}
