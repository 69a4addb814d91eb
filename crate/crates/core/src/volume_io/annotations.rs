use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{fmt_f64, parse_f64, LabelTable};
use crate::error::{Error, Result};
use crate::roialign::RoiBox;

const HEADER: &str = "# class_id y1 x1 y2 x2 mask_file";

/// One annotated instance. `mask_file` is relative to the annotation file.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub class_id: u16,
    pub bbox: RoiBox,
    pub mask_file: String,
}

pub fn write_annotations(items: &[Annotation], path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    for a in items {
        if a.mask_file.is_empty() || a.mask_file.contains(char::is_whitespace) {
            return Err(Error::arg(format!("mask file name {:?} must be non-empty without spaces", a.mask_file)));
        }
        let b = &a.bbox;
        writeln!(
            out,
            "{} {} {} {} {} {}",
            a.class_id,
            fmt_f64(b.y1),
            fmt_f64(b.x1),
            fmt_f64(b.y2),
            fmt_f64(b.x2),
            a.mask_file
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses an annotation list, resolving class ids against `labels` and
/// checking that every referenced mask file exists.
pub fn read_annotations(path: &Path, labels: &LabelTable) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::format(path, format!("line {}: {what}: {line}", n + 1));
        let [cls, y1, x1, y2, x2, mask] = fields[..] else {
            return Err(bad("expected 6 fields"));
        };
        let class_id: u16 = cls.parse().map_err(|_| bad("bad class id"))?;
        if !labels.contains_key(&class_id) {
            return Err(bad("class id not in label table"));
        }
        let coords: Vec<f64> = [y1, x1, y2, x2].iter().filter_map(|s| parse_f64(s)).collect();
        let [y1, x1, y2, x2] = coords[..] else {
            return Err(bad("bad box coordinate"));
        };
        let bbox = RoiBox::new(y1, x1, y2, x2).map_err(|_| bad("invalid box"))?;
        if !dir.join(mask).is_file() {
            return Err(bad("dangling mask reference"));
        }
        items.push(Annotation {
            class_id,
            bbox,
            mask_file: mask.to_string(),
        });
    }
    Ok(items)
}
