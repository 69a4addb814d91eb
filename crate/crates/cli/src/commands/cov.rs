use std::path::{Path, PathBuf};

use clap::Args;
use imrk_core::seg_metrics::{cov_table, MetricsReport};
use imrk_core::volume_io::{write_report, ReportFormat};

use super::{create_dir, require_exists, Outcome};
use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct CovArgs {
    #[command(flatten)]
    common: Common,
    /// Volume list (mL) of the first rater: one value per line, or CSV rows whose last field is the value.
    #[arg(long)]
    volumes_a: Option<PathBuf>,
    #[arg(long)]
    volumes_b: Option<PathBuf>,
    /// Further raters; repeatable.
    #[arg(long)]
    volumes: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Values of a volume list. A first row whose last field is not a number is a header.
fn read_list(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let rows = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    for (k, line) in rows.enumerate() {
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Err(_) if k == 0 => {}
            _ => return Err(CliError::data("format", format!("{}: bad volume {field:?}", path.display()))),
        }
    }
    Ok(values)
}

pub fn run(a: CovArgs) -> Outcome {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let mut paths = vec![s.path("volumes-a", a.volumes_a)?, s.path("volumes-b", a.volumes_b)?];
    let extra = (!a.volumes.is_empty())
        .then(|| a.volumes.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));
    if let Some(list) = s.optional::<String>("volumes", extra)? {
        paths.extend(list.split(',').filter(|p| !p.is_empty()).map(PathBuf::from));
    }
    let out = s.path("out", a.out)?;
    let settings = s.finish()?;

    let mut names = Vec::with_capacity(paths.len());
    let mut lists = Vec::with_capacity(paths.len());
    for p in &paths {
        require_exists(p)?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if names.contains(&name) {
            return Err(CliError::usage(format!("two volume lists are named {name:?}")));
        }
        names.push(name);
        lists.push(read_list(p)?);
    }
    let table = cov_table(names, &lists)?;
    for (i, a) in table.names.iter().enumerate() {
        for (j, b) in table.names.iter().enumerate().skip(i + 1) {
            println!("{a} vs {b}: cov={:.6} mean_abs_diff_ml={:.6}", table.cov[i][j], table.diff_mean[i][j]);
        }
    }

    create_dir(&out)?;
    let report = MetricsReport { classes: Vec::new(), cov: Some(table) };
    write_report(&report, &out.join("cov.csv"), ReportFormat::Csv)?;
    let mut m = RunManifest::new("report-cov", settings);
    for p in &paths {
        m.input(p);
    }
    m.output("cov.csv");
    Ok((m, out))
}
