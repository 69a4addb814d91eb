use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{fmt_f64, parse_f64};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

const MAGIC: &str = "IMRKVOL1";

/// Label id to name.
pub type LabelTable = BTreeMap<u16, String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeKind {
    Labels,
    Intensity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Voxels {
    /// Unsigned 16-bit label ids.
    Labels(Vec<u16>),
    /// 32-bit float intensities.
    Intensity(Vec<f32>),
}

impl Voxels {
    fn len(&self) -> usize {
        match self {
            Voxels::Labels(v) => v.len(),
            Voxels::Intensity(v) => v.len(),
        }
    }
}

/// 3-D voxel grid, x fastest, with spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Voxels,
    labels: LabelTable,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Voxels, labels: LabelTable) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::dim(format!("volume extents must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::arg(format!("spacing must be positive, got {spacing:?}")));
        }
        let n: usize = dims.iter().product();
        if voxels.len() != n {
            return Err(Error::dim(format!("volume {dims:?} needs {n} voxels, got {}", voxels.len())));
        }
        if let Voxels::Labels(v) = &voxels {
            if let Some(bad) = v.iter().find(|id| !labels.contains_key(id)) {
                return Err(Error::arg(format!("label id {bad} missing from the label table")));
            }
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
            labels,
        })
    }

    pub fn labels(dims: [usize; 3], spacing: [f64; 3], ids: Vec<u16>, table: LabelTable) -> Result<Self> {
        Self::new(dims, spacing, Voxels::Labels(ids), table)
    }

    pub fn intensity(dims: [usize; 3], spacing: [f64; 3], values: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing, Voxels::Intensity(values), LabelTable::new())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &Voxels {
        &self.voxels
    }

    pub fn label_table(&self) -> &LabelTable {
        &self.labels
    }

    pub fn kind(&self) -> VolumeKind {
        match self.voxels {
            Voxels::Labels(_) => VolumeKind::Labels,
            Voxels::Intensity(_) => VolumeKind::Intensity,
        }
    }

    pub fn label_ids(&self) -> Option<&[u16]> {
        match &self.voxels {
            Voxels::Labels(v) => Some(v),
            Voxels::Intensity(_) => None,
        }
    }

    pub fn intensities(&self) -> Option<&[f32]> {
        match &self.voxels {
            Voxels::Intensity(v) => Some(v),
            Voxels::Labels(_) => None,
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Occupancy of one label id; all-false for intensity volumes.
    pub fn mask_of(&self, label: u16) -> BinaryMask {
        let data = match &self.voxels {
            Voxels::Labels(v) => v.iter().map(|&id| id == label).collect(),
            Voxels::Intensity(v) => vec![false; v.len()],
        };
        BinaryMask::new(self.dims, self.spacing, data).expect("same grid")
    }

    /// Label volume from a binary mask (`0` background, `label` foreground).
    pub fn from_mask(mask: &BinaryMask, label: u16, name: &str) -> Result<Self> {
        let mut table = LabelTable::new();
        table.insert(0, "background".into());
        table.insert(label, name.into());
        let ids = mask.data().iter().map(|&v| if v { label } else { 0 }).collect();
        Self::labels(mask.dims(), mask.spacing(), ids, table)
    }
}

/// Bounds applied when loading untrusted files.
#[derive(Clone, Copy, Debug)]
pub struct ReadOptions {
    pub max_voxels: usize,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            max_voxels: 512 * 512 * 512,
        }
    }
}

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Writes `<path>` (text header) and `<path stem>.raw` (little-endian payload).
pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    let payload = payload_path(path);
    let (dtype, kind, bytes) = match &v.voxels {
        Voxels::Labels(ids) => ("u16", "labels", ids.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>()),
        Voxels::Intensity(vals) => ("f32", "intensity", vals.iter().flat_map(|x| x.to_le_bytes()).collect()),
    };
    let mut h = String::new();
    let [nx, ny, nz] = v.dims;
    let [sx, sy, sz] = v.spacing;
    writeln!(h, "{MAGIC}").unwrap();
    writeln!(h, "dims {nx} {ny} {nz}").unwrap();
    writeln!(h, "spacing_mm {} {} {}", fmt_f64(sx), fmt_f64(sy), fmt_f64(sz)).unwrap();
    writeln!(h, "kind {kind}").unwrap();
    writeln!(h, "dtype {dtype}").unwrap();
    writeln!(h, "byte_order little").unwrap();
    writeln!(h, "layout x-fastest").unwrap();
    let name = payload.file_name().expect("file name").to_string_lossy();
    writeln!(h, "data {name}").unwrap();
    for (id, label) in &v.labels {
        writeln!(h, "label {id} {label}").unwrap();
    }
    fs::write(path, h).map_err(|e| Error::io(path, e))?;
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    read_volume_with(path, &ReadOptions::default())
}

pub fn read_volume_with(path: &Path, opts: &ReadOptions) -> Result<Volume> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(Error::format(path, format!("missing {MAGIC} magic")));
    }
    let mut dims = None;
    let mut spacing = None;
    let mut kind = None;
    let mut dtype = None;
    let mut data_name = None;
    let mut labels = LabelTable::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "dims" => {
                let d: Vec<usize> = rest.split_whitespace().filter_map(|s| s.parse().ok()).collect();
                let [x, y, z] = d[..] else {
                    return Err(Error::format(path, format!("bad dims line: {line}")));
                };
                dims = Some([x, y, z]);
            }
            "spacing_mm" => {
                let s: Vec<f64> = rest.split_whitespace().filter_map(parse_f64).collect();
                let [x, y, z] = s[..] else {
                    return Err(Error::format(path, format!("bad spacing line: {line}")));
                };
                spacing = Some([x, y, z]);
            }
            "kind" => kind = Some(rest.trim().to_string()),
            "dtype" => dtype = Some(rest.trim().to_string()),
            "byte_order" if rest.trim() != "little" => {
                return Err(Error::format(path, format!("unsupported byte order {rest}")));
            }
            "layout" if rest.trim() != "x-fastest" => {
                return Err(Error::format(path, format!("unsupported layout {rest}")));
            }
            "data" => data_name = Some(rest.trim().to_string()),
            "label" => {
                let (id, name) = rest.split_once(' ').unwrap_or((rest, ""));
                let id: u16 = id
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad label id in: {line}")))?;
                labels.insert(id, name.trim().to_string());
            }
            "byte_order" | "layout" => {}
            other => return Err(Error::format(path, format!("unknown header key {other}"))),
        }
    }
    let dims = dims.ok_or_else(|| Error::format(path, "missing dims"))?;
    let spacing = spacing.ok_or_else(|| Error::format(path, "missing spacing_mm"))?;
    let data_name = data_name.ok_or_else(|| Error::format(path, "missing data"))?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= opts.max_voxels)
        .ok_or_else(|| {
            Error::format(path, format!("dims {dims:?} exceed the limit of {} voxels", opts.max_voxels))
        })?;
    let width = match dtype.as_deref() {
        Some("u16") => 2,
        Some("f32") => 4,
        other => return Err(Error::format(path, format!("unknown dtype {other:?}"))),
    };
    let payload = path.with_file_name(&data_name);
    let expected = count * width;
    let actual = fs::metadata(&payload).map_err(|e| Error::io(&payload, e))?.len();
    if actual != expected as u64 {
        return Err(Error::format(
            &payload,
            format!("payload size mismatch: expected {expected} bytes, found {actual}"),
        ));
    }
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let voxels = match (kind.as_deref(), width) {
        (Some("labels"), 2) => Voxels::Labels(
            bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect(),
        ),
        (Some("intensity"), 4) => Voxels::Intensity(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        (k, _) => {
            return Err(Error::format(path, format!("kind {k:?} does not match dtype {dtype:?}")));
        }
    };
    Volume::new(dims, spacing, voxels, labels).map_err(|e| Error::format(path, e.to_string()))
}
