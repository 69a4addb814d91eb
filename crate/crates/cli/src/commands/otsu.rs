use std::path::PathBuf;

use clap::Args;
use imrk_core::classes::{EFFUSION, NAMES};
use imrk_core::seg_metrics::{fluid_volume, otsu_threshold};
use imrk_core::volume_io::{read_volume, write_volume, LabelTable, Volume};
use imrk_core::RoiBox;

use super::{create_dir, require_exists, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct OtsuArgs {
    #[command(flatten)]
    common: Common,
    /// Intensity volume (`.hdr`).
    #[arg(long)]
    intensity: Option<PathBuf>,
    /// Region `y1,x1,y2,x2` in normalized in-plane coordinates, applied to every slice.
    #[arg(long)]
    roi_box: Option<String>,
    /// Histogram bins.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_box(s: &str) -> Result<RoiBox, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("--roi-box {s:?}: {e}")))?;
    let [y1, x1, y2, x2] = v[..] else {
        return Err(CliError::usage(format!("--roi-box needs four values, got {s:?}")));
    };
    let b = RoiBox { y1, x1, y2, x2 };
    let inside = v.iter().all(|c| (0.0..=1.0).contains(c));
    if !inside || y2 <= y1 || x2 <= x1 {
        return Err(CliError::usage(format!("--roi-box {s:?} must satisfy 0 <= y1 < y2 <= 1, 0 <= x1 < x2 <= 1")));
    }
    Ok(b)
}

pub fn run(a: OtsuArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let path = s.path("intensity", a.intensity)?;
    let roi_text: String = s.require("roi-box", a.roi_box)?;
    let bins = s.get("bins", a.bins, 256usize)?;
    let out = s.path("out", a.out)?;
    let settings = s.finish()?;
    let roi = parse_box(&roi_text)?;
    require_exists(&path)?;

    let vol = read_volume(&path)?;
    let values = vol
        .intensities()
        .ok_or_else(|| CliError::data("format", format!("{}: expected an intensity volume", path.display())))?;
    let [nx, ny, nz] = vol.dims();
    let within = |c: usize, n: usize, lo: f64, hi: f64| {
        let t = (c as f64 + 0.5) / n as f64;
        t >= lo && t < hi
    };
    let mut region = Vec::new();
    for z in 0..nz {
        for y in (0..ny).filter(|&y| within(y, ny, roi.y1, roi.y2)) {
            for x in (0..nx).filter(|&x| within(x, nx, roi.x1, roi.x2)) {
                region.push(vol.index(x, y, z));
            }
        }
    }
    if region.is_empty() {
        return Err(CliError::usage("--roi-box contains no voxel centers"));
    }
    let samples: Vec<f64> = region.iter().map(|&i| values[i] as f64).collect();
    let split = otsu_threshold(&samples, bins)?;
    let mut ids = vec![0u16; values.len()];
    for (&i, &v) in region.iter().zip(&samples) {
        if split.is_upper(v) {
            ids[i] = EFFUSION;
        }
    }
    let mut table = LabelTable::new();
    table.insert(0, NAMES[0].to_string());
    table.insert(EFFUSION, NAMES[EFFUSION as usize].to_string());
    let labels = Volume::labels(vol.dims(), vol.spacing(), ids, table)?;
    let ml = fluid_volume(&labels, EFFUSION)?;

    create_dir(&out)?;
    write_volume(&labels, &out.join("effusion_labels.hdr"))?;
    println!(
        "threshold={} voxels={} volume_ml={ml:.6}",
        split.threshold,
        labels.mask_of(EFFUSION).count()
    );

    let mut m = RunManifest::new("label-otsu", settings);
    m.input(&path);
    m.output("effusion_labels.hdr");
    m.output("effusion_labels.raw");
    Ok((m, out))
}
