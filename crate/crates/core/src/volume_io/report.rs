use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{fmt_f64, parse_f64};
use crate::error::{Error, Result};
use crate::seg_metrics::{ClassMetrics, CovTable, DistanceUnit, MetricsReport};

const CLASS_HEADER: &str = "class,dice,precision,hausdorff,avg_hausdorff,ap,unit";
const RATER_HEADER: &str = "rater,volume_mean_ml,volume_sd_ml";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl std::fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::JsonLines => "json-lines",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            _ => Err(Error::arg(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Class(ClassMetrics),
    CovTable(CovTable),
}

pub fn write_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => to_csv(report)?,
        ReportFormat::JsonLines => {
            let mut out = String::new();
            let lines = report
                .classes
                .iter()
                .cloned()
                .map(Line::Class)
                .chain(report.cov.clone().map(Line::CovTable));
            for line in lines {
                out.push_str(&serde_json::to_string(&line).expect("report serializes"));
                out.push('\n');
            }
            out
        }
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => from_csv(&text).map_err(|d| Error::format(path, d)),
        ReportFormat::JsonLines => {
            let mut report = MetricsReport::default();
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                match serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))? {
                    Line::Class(c) => report.classes.push(c),
                    Line::CovTable(t) => report.cov = Some(t),
                }
            }
            Ok(report)
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains([',', '\n', '\r']) || name != name.trim() {
        return Err(Error::arg(format!("name {name:?} cannot be written as a CSV cell")));
    }
    Ok(())
}

fn to_csv(report: &MetricsReport) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{CLASS_HEADER}").unwrap();
    for c in &report.classes {
        check_name(&c.class)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.class,
            cell(c.dice),
            cell(c.precision),
            cell(c.hausdorff),
            cell(c.avg_hausdorff),
            cell(c.ap),
            c.unit
        )
        .unwrap();
    }
    if let Some(t) = &report.cov {
        for n in &t.names {
            check_name(n)?;
        }
        writeln!(out, "\n{RATER_HEADER}").unwrap();
        for (i, n) in t.names.iter().enumerate() {
            writeln!(out, "{n},{},{}", fmt_f64(t.volume_mean[i]), cell(t.volume_sd[i])).unwrap();
        }
        let matrix = |out: &mut String, title: &str, rows: Vec<Vec<Option<f64>>>| {
            writeln!(out, "\n{title},{}", t.names.join(",")).unwrap();
            for (n, row) in t.names.iter().zip(rows) {
                let cells: Vec<String> = row.into_iter().map(cell).collect();
                writeln!(out, "{n},{}", cells.join(",")).unwrap();
            }
        };
        let some = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        matrix(&mut out, "cov", some(&t.cov));
        matrix(&mut out, "diff_mean_ml", some(&t.diff_mean));
        matrix(&mut out, "diff_sd_ml", t.diff_sd.clone());
    }
    Ok(out)
}

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    parse_f64(s).map(Some).ok_or_else(|| format!("bad number {s:?}"))
}

fn from_csv(text: &str) -> std::result::Result<MetricsReport, String> {
    let mut blocks: Vec<Vec<&str>> = vec![];
    let mut current = vec![];
    for line in text.lines() {
        if line.is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    let mut blocks = blocks.into_iter();
    let classes = blocks.next().ok_or("empty report")?;
    if classes[0] != CLASS_HEADER {
        return Err(format!("unexpected header {:?}", classes[0]));
    }
    let mut report = MetricsReport::default();
    for row in &classes[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let [class, dice, precision, hd, ahd, ap, unit] = f[..] else {
            return Err(format!("class row needs 7 cells: {row}"));
        };
        report.classes.push(ClassMetrics {
            class: class.to_string(),
            dice: parse_cell(dice)?,
            precision: parse_cell(precision)?,
            hausdorff: parse_cell(hd)?,
            avg_hausdorff: parse_cell(ahd)?,
            ap: parse_cell(ap)?,
            unit: unit.parse::<DistanceUnit>().map_err(|e| e.to_string())?,
        });
    }

    let rest: Vec<Vec<&str>> = blocks.collect();
    if rest.is_empty() {
        return Ok(report);
    }
    let [raters, cov, diff_mean, diff_sd] = &rest[..] else {
        return Err(format!("expected 4 agreement blocks, found {}", rest.len()));
    };
    if raters[0] != RATER_HEADER {
        return Err(format!("unexpected header {:?}", raters[0]));
    }
    let mut names = vec![];
    let mut volume_mean = vec![];
    let mut volume_sd = vec![];
    for row in &raters[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let [name, mean, sd] = f[..] else {
            return Err(format!("rater row needs 3 cells: {row}"));
        };
        names.push(name.to_string());
        volume_mean.push(parse_cell(mean)?.ok_or("missing mean volume")?);
        volume_sd.push(parse_cell(sd)?);
    }
    let matrix = |block: &[&str], title: &str| -> std::result::Result<Vec<Vec<Option<f64>>>, String> {
        let header = format!("{title},{}", names.join(","));
        if block[0] != header || block.len() != names.len() + 1 {
            return Err(format!("malformed {title} block"));
        }
        block[1..]
            .iter()
            .zip(&names)
            .map(|(row, name)| {
                let f: Vec<&str> = row.split(',').collect();
                if f[0] != name || f.len() != names.len() + 1 {
                    return Err(format!("malformed {title} row {row:?}"));
                }
                f[1..].iter().map(|c| parse_cell(c)).collect()
            })
            .collect()
    };
    let dense = |m: Vec<Vec<Option<f64>>>| -> std::result::Result<Vec<Vec<f64>>, String> {
        m.into_iter()
            .map(|r| r.into_iter().map(|v| v.ok_or_else(|| "missing matrix cell".to_string())).collect())
            .collect()
    };
    report.cov = Some(CovTable {
        cov: dense(matrix(cov, "cov")?)?,
        diff_mean: dense(matrix(diff_mean, "diff_mean_ml")?)?,
        diff_sd: matrix(diff_sd, "diff_sd_ml")?,
        names,
        volume_mean,
        volume_sd,
    });
    Ok(report)
}
