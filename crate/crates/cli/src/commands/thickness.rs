use std::path::PathBuf;

use clap::Args;
use imrk_core::cart_geometry::{
    extract_surfaces, fit_cylinder_axis, flatten_radial, thickness_samples, write_thickness_csv, write_thickness_pgm,
    AxisConstraint, Provenance, ANGLE_BINS, DEFAULT_MAX_THICKNESS_MM,
};
use imrk_core::classes::{CARTILAGE, FEMUR};
use imrk_core::volume_io::read_volume;

use super::{create_dir, require_exists, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct ThicknessArgs {
    #[command(flatten)]
    common: Common,
    /// Label volume (`.hdr`).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Label id of the measured tissue.
    #[arg(long)]
    tissue: Option<u16>,
    /// Label id of the bone the tissue sits on.
    #[arg(long)]
    bone: Option<u16>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cylinder axis: slice-normal or free.
    #[arg(long)]
    axis: Option<String>,
    /// Samples above this thickness (mm) are dropped.
    #[arg(long)]
    max_thickness: Option<f64>,
    /// gt or prediction, recorded in the map.
    #[arg(long)]
    provenance: Option<String>,
}

pub fn run(a: ThicknessArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let labels_path = s.path("labels", a.labels)?;
    let tissue = s.get("tissue", a.tissue, CARTILAGE)?;
    let bone = s.get("bone", a.bone, FEMUR)?;
    let out = s.path("out", a.out)?;
    let axis = match s.get("axis", a.axis, "slice-normal".to_string())?.as_str() {
        "slice-normal" => AxisConstraint::SliceNormal,
        "free" => AxisConstraint::Free,
        other => return Err(CliError::usage(format!("--axis must be slice-normal or free, got {other:?}"))),
    };
    let max_mm = s.get("max-thickness", a.max_thickness, DEFAULT_MAX_THICKNESS_MM)?;
    let provenance = match s.get("provenance", a.provenance, "gt".to_string())?.as_str() {
        "gt" => Provenance::GroundTruth,
        "prediction" => Provenance::Prediction,
        other => return Err(CliError::usage(format!("--provenance must be gt or prediction, got {other:?}"))),
    };
    let settings = s.finish()?;
    require_exists(&labels_path)?;

    let vol = read_volume(&labels_path)?;
    let (inner, outer) = extract_surfaces(&vol, tissue, bone)?;
    let cylinder = fit_cylinder_axis(&inner.points_mm(), axis)?;
    let samples = thickness_samples(&inner, &outer)?;
    let map = flatten_radial(&inner, &samples, &cylinder, vol.dims()[2], provenance, max_mm)?;

    create_dir(&out)?;
    write_thickness_csv(&map, &out.join("thickness.csv"))?;
    write_thickness_pgm(&map, &out.join("thickness.pgm"))?;
    let covered = map.covered().len();
    match map.covered_stats() {
        Some(st) => println!(
            "radius_mm={:.4} covered_bins={covered}/{} mean_mm={:.4} sd_mm={:.4}",
            cylinder.radius,
            ANGLE_BINS * map.n_slices(),
            st.mean,
            st.sd
        ),
        None => println!("radius_mm={:.4} covered_bins=0/{}", cylinder.radius, ANGLE_BINS * map.n_slices()),
    }

    let mut m = RunManifest::new("thickness", settings);
    m.input(&labels_path);
    m.output("thickness.csv");
    m.output("thickness.pgm");
    Ok((m, out))
}
