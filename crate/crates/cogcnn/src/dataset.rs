//! Dataset plumbing: folder loading, modality extraction to disk with a
//! JSONL manifest, and conversion of images and modality bundles into the
//! tensors the training loops consume.
//!
//! Disk layout for extracted modalities:
//! `<out>/<modality>/<class>/<name>.png`, with `manifest.jsonl` at the root.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cue::{MiscueExample, SyntheticExample};
use crate::image_data::{ImageError, RgbImage};
use crate::modality::{extract_modalities, ModalityBundle, ModalityError, TextureSynthConfig};
use crate::train::Stage1Data;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{id}: {source}")]
    Modality {
        id: String,
        #[source]
        source: ModalityError,
    },
    #[error("bad dataset layout: {0}")]
    BadLayout(String),
    #[error("bad manifest line {line}: {source}")]
    Manifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// One source image with its class label.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub label: usize,
    /// `class/stem`, stable across runs.
    pub id: String,
}

/// Load a folder-of-class-folders image dataset. Class names are the
/// sorted directory names; files are read in sorted order.
pub fn load_image_folder(root: &Path) -> Result<(Vec<LabeledImage>, Vec<String>), DatasetError> {
    let mut class_names: Vec<String> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    class_names.sort();
    if class_names.is_empty() {
        return Err(DatasetError::BadLayout(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    let mut out = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png" | "jpg" | "jpeg")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(DatasetError::BadLayout(format!(
                "class directory {} has no images",
                dir.display()
            )));
        }
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string();
            out.push(LabeledImage {
                image: RgbImage::load(&path)?,
                label,
                id: format!("{class}/{stem}"),
            });
        }
    }
    Ok((out, class_names))
}

/// One manifest line per source image.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub class: String,
    pub label: usize,
    /// Paths relative to the manifest location, keyed by modality name.
    pub modality_paths: BTreeMap<String, String>,
}

/// Extract all four modalities for every image and write them as PNGs plus
/// a `manifest.jsonl`.
pub fn extract_to_dir(
    images: &[LabeledImage],
    class_names: &[String],
    out_dir: &Path,
    tex_cfg: &TextureSynthConfig,
    resolution: usize,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut entries = Vec::with_capacity(images.len());
    for item in images {
        let bundle = extract_modalities(&item.image, tex_cfg, resolution, &item.id)
            .map_err(|source| DatasetError::Modality { id: item.id.clone(), source })?;
        let class = &class_names[item.label];
        let stem = item.id.rsplit('/').next().unwrap_or(&item.id);
        let mut modality_paths = BTreeMap::new();
        for (name, save) in [
            ("shape", &bundle.shape.to_grey().to_rgb() as &RgbImage),
            ("texture", &bundle.texture),
            ("greyscale", &bundle.greyscale.to_rgb()),
            ("edges", &bundle.edges.to_grey().to_rgb()),
        ] {
            let rel = format!("{name}/{class}/{stem}.png");
            let path = out_dir.join(&rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            save.save(&path)?;
            modality_paths.insert(name.to_string(), rel);
        }
        entries.push(ManifestEntry {
            id: item.id.clone(),
            class: class.clone(),
            label: item.label,
            modality_paths,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    let mut f = fs::File::create(&manifest).map_err(io_err(&manifest))?;
    for e in &entries {
        let line = serde_json::to_string(e).expect("manifest entry serializes");
        writeln!(f, "{line}").map_err(io_err(&manifest))?;
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry =
            serde_json::from_str(&line).map_err(|source| DatasetError::Manifest { line: i + 1, source })?;
        out.push(entry);
    }
    Ok(out)
}

/// Tensors for one split: modality inputs, RGB targets and labels.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    pub data: Stage1Data,
    pub labels: Vec<usize>,
}

impl TensorDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stack the RGB image and all modality channels into one
    /// `[N, 3+sum(c_i), R, R]` tensor (the cue-augmented input).
    pub fn stacked_channels(&self) -> Array4<f32> {
        let views: Vec<_> = std::iter::once(self.data.images.view())
            .chain(self.data.modalities.iter().map(|m| m.view()))
            .collect();
        ndarray::concatenate(ndarray::Axis(1), &views).expect("matching shapes")
    }
}

/// Convert one modality bundle into per-modality `[c, R, R]` channel data,
/// appended to the per-modality accumulators.
fn push_bundle(acc: &mut [Vec<f32>; 4], bundle: &ModalityBundle) {
    for v in bundle.shape.values() {
        acc[0].push(*v as u8 as f32);
    }
    for c in 0..3 {
        for p in bundle.texture.pixels() {
            acc[1].push(p[c]);
        }
    }
    acc[2].extend_from_slice(bundle.greyscale.values());
    for v in bundle.edges.values() {
        acc[3].push(*v as u8 as f32);
    }
}

fn push_rgb(acc: &mut Vec<f32>, img: &RgbImage) {
    for c in 0..3 {
        for p in img.pixels() {
            acc.push(p[c]);
        }
    }
}

/// Extract modalities and tensorize a set of labeled images.
pub fn tensorize(
    items: &[(RgbImage, usize, String)],
    tex_cfg: &TextureSynthConfig,
    resolution: usize,
) -> Result<TensorDataset, DatasetError> {
    let n = items.len();
    let mut acc: [Vec<f32>; 4] = Default::default();
    let mut img_acc = Vec::with_capacity(n * 3 * resolution * resolution);
    let mut labels = Vec::with_capacity(n);
    for (image, label, id) in items {
        let bundle = extract_modalities(image, tex_cfg, resolution, id)
            .map_err(|source| DatasetError::Modality { id: id.clone(), source })?;
        push_bundle(&mut acc, &bundle);
        push_rgb(&mut img_acc, &image.resize(resolution, resolution));
        labels.push(*label);
    }
    let r = resolution;
    let channels = [1usize, 3, 1, 1];
    let modalities = acc
        .iter()
        .zip(channels)
        .map(|(data, c)| {
            Array4::from_shape_vec((n, c, r, r), data.clone()).expect("accumulated size")
        })
        .collect();
    let images = Array4::from_shape_vec((n, 3, r, r), img_acc).expect("accumulated size");
    Ok(TensorDataset { data: Stage1Data { modalities, images }, labels })
}

/// Tensorize a synthetic split.
pub fn tensorize_synthetic(
    examples: &[SyntheticExample],
    tex_cfg: &TextureSynthConfig,
    resolution: usize,
) -> Result<TensorDataset, DatasetError> {
    let items: Vec<(RgbImage, usize, String)> = examples
        .iter()
        .map(|e| (e.image.clone(), e.label, e.id.clone()))
        .collect();
    tensorize(&items, tex_cfg, resolution)
}

/// Tensorized miscue split with both conflicting labels.
#[derive(Debug, Clone)]
pub struct MiscueTensors {
    pub data: Stage1Data,
    pub shape_labels: Vec<usize>,
    pub texture_labels: Vec<usize>,
}

pub fn tensorize_miscue(
    examples: &[MiscueExample],
    tex_cfg: &TextureSynthConfig,
    resolution: usize,
) -> Result<MiscueTensors, DatasetError> {
    let items: Vec<(RgbImage, usize, String)> = examples
        .iter()
        .map(|e| (e.image.clone(), e.shape_label, e.id.clone()))
        .collect();
    let t = tensorize(&items, tex_cfg, resolution)?;
    Ok(MiscueTensors {
        data: t.data,
        shape_labels: examples.iter().map(|e| e.shape_label).collect(),
        texture_labels: examples.iter().map(|e| e.texture_label).collect(),
    })
}
