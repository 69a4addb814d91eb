use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use imrk_core::classes::label_table;
use imrk_core::seg_metrics::{
    average_hausdorff, average_precision, dice, hausdorff, precision, ClassMetrics, ConfusionCounts, DistanceUnit,
    MetricsReport, PointSet,
};
use imrk_core::training::dataset_names;
use imrk_core::volume_io::{read_annotations, read_volume, write_report, ReportFormat, Volume};
use imrk_core::{BinaryMask, Error};
use rayon::prelude::*;

use super::{create_dir, require_exists, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Predicted dataset directory (as written by `infer`).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Reference dataset directory (as written by `synth`).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Distance unit for the Hausdorff columns: voxel or mm.
    #[arg(long)]
    units: Option<DistanceUnit>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-scene evaluation.
    #[arg(long)]
    jobs: Option<usize>,
    /// csv or json-lines.
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Default)]
struct SceneClass {
    dice: Option<f64>,
    precision: Option<f64>,
    hausdorff: Option<f64>,
    avg_hausdorff: Option<f64>,
    ap: Option<f64>,
}

struct Side {
    labels: Volume,
    /// (class id, score, mask) per annotated instance.
    instances: Vec<(u16, f64, BinaryMask)>,
}

fn load_side(dir: &Path, name: &str) -> imrk_core::Result<Side> {
    let labels = read_volume(&dir.join(format!("{name}_labels.hdr")))?;
    let ann_path = dir.join(format!("{name}.txt"));
    let mut instances = Vec::new();
    if ann_path.exists() {
        let ann = read_annotations(&ann_path, &label_table())?;
        let score_path = dir.join(format!("{name}_scores.txt"));
        let scores = if score_path.exists() {
            let text = std::fs::read_to_string(&score_path).map_err(|e| Error::io(&score_path, e))?;
            let v = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.parse::<f64>().map_err(|_| Error::format(&score_path, format!("bad score {l:?}"))))
                .collect::<imrk_core::Result<Vec<_>>>()?;
            if v.len() != ann.len() {
                return Err(Error::format(&score_path, format!("{} scores for {} instances", v.len(), ann.len())));
            }
            v
        } else {
            vec![1.0; ann.len()]
        };
        for (a, score) in ann.into_iter().zip(scores) {
            let mask = read_volume(&dir.join(&a.mask_file))?.mask_of(a.class_id);
            instances.push((a.class_id, score, mask));
        }
    }
    Ok(Side { labels, instances })
}

fn present(v: &Volume) -> BTreeSet<u16> {
    v.label_ids().map(|ids| ids.iter().copied().filter(|&c| c != 0).collect()).unwrap_or_default()
}

fn scene_metrics(pred: &Side, gt: &Side, unit: DistanceUnit) -> imrk_core::Result<BTreeMap<u16, SceneClass>> {
    if pred.labels.dims() != gt.labels.dims() {
        return Err(Error::dim(format!(
            "prediction grid {:?} differs from reference {:?}",
            pred.labels.dims(),
            gt.labels.dims()
        )));
    }
    let mut classes = present(&pred.labels);
    classes.extend(present(&gt.labels));
    classes.extend(gt.instances.iter().map(|i| i.0));
    let mut out = BTreeMap::new();
    for c in classes {
        let pm = pred.labels.mask_of(c);
        let gm = gt.labels.mask_of(c);
        let mut r = SceneClass::default();
        if pm.count() + gm.count() > 0 {
            r.dice = Some(dice(&pm, &gm)?);
            r.precision = precision(&ConfusionCounts::from_masks(&pm, &gm)?).ok();
            let (pb, gb) = (PointSet::boundary_of(&pm), PointSet::boundary_of(&gm));
            if !pb.is_empty() && !gb.is_empty() {
                r.hausdorff = Some(hausdorff(&pb, &gb, unit)?);
                r.avg_hausdorff = Some(average_hausdorff(&pb, &gb, unit)?);
            }
        }
        let gts: Vec<&BinaryMask> = gt.instances.iter().filter(|i| i.0 == c).map(|i| &i.2).collect();
        let dets: Vec<(f64, &BinaryMask)> =
            pred.instances.iter().filter(|i| i.0 == c).map(|i| (i.1, &i.2)).collect();
        r.ap = match average_precision(&dets, &gts, 0.5) {
            Ok(v) => Some(v),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        out.insert(c, r);
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn run(a: EvalArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let pred_dir = s.path("pred", a.pred)?;
    let gt_dir = s.path("gt", a.gt)?;
    let unit = s.get("units", a.units, DistanceUnit::Voxel)?;
    let out = s.path("out", a.out)?;
    let jobs: usize = s.get("jobs", a.jobs, 1)?;
    let format = s.get("format", a.format, ReportFormat::Csv)?;
    let settings = s.finish()?;
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    require_exists(&pred_dir)?;
    require_exists(&gt_dir)?;

    let names = dataset_names(&gt_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::data("io", format!("thread pool: {e}")))?;
    let per_scene: Vec<BTreeMap<u16, SceneClass>> = pool.install(|| {
        names
            .par_iter()
            .map(|n| scene_metrics(&load_side(&pred_dir, n)?, &load_side(&gt_dir, n)?, unit))
            .collect::<imrk_core::Result<Vec<_>>>()
    })?;

    let table = label_table();
    let classes: BTreeSet<u16> = per_scene.iter().flat_map(|m| m.keys().copied()).collect();
    let mut report = MetricsReport::default();
    for c in classes {
        let rows: Vec<&SceneClass> = per_scene.iter().filter_map(|m| m.get(&c)).collect();
        let name = table.get(&c).cloned().unwrap_or_else(|| format!("label{c}"));
        let row = ClassMetrics {
            class: name,
            dice: mean(rows.iter().map(|r| r.dice)),
            precision: mean(rows.iter().map(|r| r.precision)),
            hausdorff: mean(rows.iter().map(|r| r.hausdorff)),
            avg_hausdorff: mean(rows.iter().map(|r| r.avg_hausdorff)),
            ap: mean(rows.iter().map(|r| r.ap)),
            unit,
        };
        let show = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
        println!(
            "class={} dice={} precision={} hausdorff={} avg_hausdorff={} ap={}",
            row.class,
            show(row.dice),
            show(row.precision),
            show(row.hausdorff),
            show(row.avg_hausdorff),
            show(row.ap)
        );
        report.classes.push(row);
    }

    create_dir(&out)?;
    let file = match format {
        ReportFormat::Csv => "metrics.csv",
        ReportFormat::JsonLines => "metrics.jsonl",
    };
    write_report(&report, &out.join(file), format)?;
    let mut m = RunManifest::new("eval", settings);
    m.input(&pred_dir);
    m.input(&gt_dir);
    m.output(file);
    Ok((m, out))
}
