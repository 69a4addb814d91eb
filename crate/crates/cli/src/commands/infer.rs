use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use imrk_core::classes::{label_table, NAMES};
use imrk_core::detector::{Checkpoint, Detection};
use imrk_core::training::{dataset_names, infer, read_image};
use imrk_core::volume_io::{fmt_f64, write_annotations, write_volume, Annotation, Volume};

use super::{create_dir, listing, require_exists, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory, or one intensity image (`.hdr`).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    score_threshold: Option<f64>,
    /// IoU above which a lower-scoring box of the same class is suppressed.
    #[arg(long)]
    nms: Option<f64>,
}

/// Scene names and image paths of a dataset directory or a single image.
fn scenes(input: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    if input.is_dir() {
        Ok(dataset_names(input)?
            .into_iter()
            .map(|n| {
                let p = input.join(format!("{n}.hdr"));
                (n, p)
            })
            .collect())
    } else {
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::usage(format!("{}: not an image path", input.display())))?;
        Ok(vec![(stem, input.to_path_buf())])
    }
}

fn write_scene(out: &Path, name: &str, image_size: usize, dets: &[Detection]) -> Result<(), CliError> {
    let mut ids = vec![0u16; image_size * image_size];
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].score.total_cmp(&dets[b].score).then(b.cmp(&a)));
    for &i in &order {
        let m = dets[i].image_mask.as_ref().expect("pasted mask");
        for (v, &on) in ids.iter_mut().zip(m.data()) {
            if on {
                *v = dets[i].class_id as u16;
            }
        }
    }
    let labels = format!("{name}_labels.hdr");
    write_volume(&Volume::labels([image_size, image_size, 1], [1.0; 3], ids, label_table())?, &out.join(&labels))?;

    let mut ann = Vec::with_capacity(dets.len());
    let mut scores = String::from("# score\n");
    for (k, d) in dets.iter().enumerate() {
        let file = format!("{name}_det{k:02}.hdr");
        let m = d.image_mask.as_ref().expect("pasted mask");
        let class = d.class_id as u16;
        write_volume(&Volume::from_mask(m, class, NAMES[d.class_id])?, &out.join(&file))?;
        writeln!(scores, "{}", fmt_f64(d.score)).unwrap();
        ann.push(Annotation { class_id: class, bbox: d.bbox, mask_file: file });
    }
    let ann_file = format!("{name}.txt");
    write_annotations(&ann, &out.join(&ann_file))?;
    let score_file = format!("{name}_scores.txt");
    std::fs::write(out.join(&score_file), scores).map_err(|e| CliError::data("io", e.to_string()))?;
    Ok(())
}

pub fn run(a: InferArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let ckpt_path = s.path("checkpoint", a.checkpoint)?;
    let input = s.path("in", a.input)?;
    let out = s.path("out", a.out)?;
    let score_thr = s.get("score-threshold", a.score_threshold, 0.5)?;
    let nms_thr = s.get("nms", a.nms, 0.5)?;
    let settings = s.finish()?;
    require_exists(&ckpt_path)?;
    require_exists(&input)?;

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let list = scenes(&input)?;
    create_dir(&out)?;
    let mut m = RunManifest::new("infer", settings);
    m.config.insert("model".into(), ckpt.config.to_kv());
    m.input(&ckpt_path);
    m.input(&input);

    let mut index = String::from("# scene\n");
    let mut csv = String::from("scene,detection,class_id,score,y1,x1,y2,x2,pixels\n");
    for (name, path) in &list {
        let image = read_image(path)?;
        let dets = infer(&image, &ckpt, score_thr, nms_thr)?;
        log::info!("{name}: {} detections", dets.len());
        for (k, d) in dets.iter().enumerate() {
            let b = &d.bbox;
            writeln!(
                csv,
                "{name},{k},{},{},{},{},{},{},{}",
                d.class_id,
                fmt_f64(d.score),
                fmt_f64(b.y1),
                fmt_f64(b.x1),
                fmt_f64(b.y2),
                fmt_f64(b.x2),
                d.image_mask.as_ref().map_or(0, |m| m.count())
            )
            .unwrap();
        }
        write_scene(&out, name, ckpt.config.image_size, &dets)?;
        writeln!(index, "{name}").unwrap();
    }
    for (file, text) in [("scenes.txt", index), ("detections.csv", csv)] {
        std::fs::write(out.join(file), text).map_err(|e| CliError::data("io", e.to_string()))?;
    }
    m.outputs = listing(&out)?;
    Ok((m, out))
}
