use std::path::PathBuf;

use clap::Args;
use imrk_core::training::{synth_generate, write_dataset, SceneConfig};

use super::{create_dir, listing, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of scenes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Crescent inner radius in pixels (also the bone's semi-major axis).
    #[arg(long)]
    crescent_inner: Option<f64>,
    #[arg(long)]
    crescent_outer: Option<f64>,
    #[arg(long)]
    crescent_half_angle: Option<f64>,
    #[arg(long)]
    bone_aspect_min: Option<f64>,
    #[arg(long)]
    center_jitter: Option<f64>,
    #[arg(long)]
    max_effusions: Option<usize>,
    #[arg(long)]
    effusion_radius_min: Option<f64>,
    #[arg(long)]
    effusion_radius_max: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
}

pub fn run(a: SynthArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let n: usize = s.require("n", a.n)?;
    if n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let seed = s.get("seed", a.seed, 7)?;
    let out = s.path("out", a.out)?;
    let d = SceneConfig::default();
    let cfg = SceneConfig {
        image_size: s.get("image-size", a.image_size, d.image_size)?,
        crescent_inner: s.get("crescent-inner", a.crescent_inner, d.crescent_inner)?,
        crescent_outer: s.get("crescent-outer", a.crescent_outer, d.crescent_outer)?,
        crescent_half_angle_deg: s.get("crescent-half-angle", a.crescent_half_angle, d.crescent_half_angle_deg)?,
        bone_aspect_min: s.get("bone-aspect-min", a.bone_aspect_min, d.bone_aspect_min)?,
        center_jitter: s.get("center-jitter", a.center_jitter, d.center_jitter)?,
        max_effusions: s.get("max-effusions", a.max_effusions, d.max_effusions)?,
        effusion_radius_min: s.get("effusion-radius-min", a.effusion_radius_min, d.effusion_radius_min)?,
        effusion_radius_max: s.get("effusion-radius-max", a.effusion_radius_max, d.effusion_radius_max)?,
        noise_sd: s.get("noise-sd", a.noise_sd, d.noise_sd)?,
    };
    let settings = s.finish()?;

    let scenes = synth_generate(n, seed, &cfg)?;
    create_dir(&out)?;
    let named: Vec<_> = scenes
        .into_iter()
        .map(|sc| (format!("scene_{:03}", sc.index), sc.scene))
        .collect();
    write_dataset(&out, &named)?;

    let mut m = RunManifest::new("synth", settings);
    m.seed = Some(seed);
    m.config.insert("scene".into(), cfg.to_kv());
    m.outputs = listing(&out)?;
    Ok((m, out))
}
