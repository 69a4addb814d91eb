use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::synth::{Instance, Scene};
use crate::classes::{label_table, NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::volume_io::{read_annotations, read_volume, write_annotations, write_volume, Annotation, Volume};

const INDEX: &str = "scenes.txt";

/// Writes one directory: `scenes.txt` listing the scene names, and per scene
/// `<name>.hdr` (intensity image), `<name>_labels.hdr` (all instances),
/// `<name>_instNN.hdr` (one mask per instance) and `<name>.txt` (annotations).
pub fn write_dataset(dir: &Path, scenes: &[(String, Scene)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("# scene\n");
    for (name, scene) in scenes {
        if name.is_empty() || name.contains(char::is_whitespace) || name.contains('/') {
            return Err(Error::arg(format!("scene name {name:?} is not a plain file stem")));
        }
        writeln!(index, "{name}").unwrap();
        let s = scene.image_size();
        let pixels: Vec<f32> = scene.image.data().iter().map(|&v| v as f32).collect();
        write_volume(&Volume::intensity([s, s, 1], [1.0; 3], pixels)?, &dir.join(format!("{name}.hdr")))?;
        write_volume(&scene.label_volume()?, &dir.join(format!("{name}_labels.hdr")))?;
        let mut ann = Vec::with_capacity(scene.instances.len());
        for (k, inst) in scene.instances.iter().enumerate() {
            let file = format!("{name}_inst{k:02}.hdr");
            let label_name = NAMES.get(inst.class_id as usize).copied().unwrap_or("object");
            write_volume(&Volume::from_mask(&inst.mask, inst.class_id, label_name)?, &dir.join(&file))?;
            ann.push(Annotation {
                class_id: inst.class_id,
                bbox: inst.bbox,
                mask_file: file,
            });
        }
        write_annotations(&ann, &dir.join(format!("{name}.txt")))?;
    }
    let path = dir.join(INDEX);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

/// Names listed in a dataset's index, in order.
pub fn dataset_names(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(Error::format(&path, "dataset lists no scenes"));
    }
    Ok(names)
}

/// Loads the intensity image of one scene as a `[1, H, W]` tensor.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let vol = read_volume(path)?;
    let [w, h, d] = vol.dims();
    if d != 1 {
        return Err(Error::format(path, format!("expected a single-slice image, got depth {d}")));
    }
    let values = vol
        .intensities()
        .ok_or_else(|| Error::format(path, "expected an intensity volume"))?;
    Tensor::new([1, h, w], values.iter().map(|&v| v as f64).collect())
}

/// Reads a directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<(String, Scene)>> {
    let table = label_table();
    dataset_names(dir)?
        .into_iter()
        .map(|name| {
            let image = read_image(&dir.join(format!("{name}.hdr")))?;
            let ann_path = dir.join(format!("{name}.txt"));
            let mut instances = Vec::new();
            for a in read_annotations(&ann_path, &table)? {
                let mask_path = dir.join(&a.mask_file);
                let mask = read_volume(&mask_path)?.mask_of(a.class_id);
                if mask.dims() != [image.shape()[2], image.shape()[1], 1] {
                    return Err(Error::format(&mask_path, "mask grid does not match the image"));
                }
                if mask.count() == 0 {
                    return Err(Error::format(&mask_path, format!("no voxels of class {}", a.class_id)));
                }
                instances.push(Instance { class_id: a.class_id, mask, bbox: a.bbox });
            }
            Ok((name, Scene { image, instances }))
        })
        .collect()
}
