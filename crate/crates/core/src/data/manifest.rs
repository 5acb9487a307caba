//! Directory layouts and the JSON dataset manifest.
//!
//! `flat`: `images/<id>.{png,ppm,pnm}`, `labels/<id>.{png,pgm}` and optional
//! `masks/<id>.*`; a `manifest.json` at the root, when present, lists ids,
//! files and splits explicitly. Without one, the sorted ids are split into
//! equal train/test halves.
//!
//! `drive`: the DRIVE tree after converting TIFF/GIF to PNG or PNM:
//! `{training,test}/images/<id>_{training,test}.*`,
//! `{training,test}/1st_manual/<id>_manual1.*`,
//! `{training,test}/mask/<id>_{training,test}_mask.*`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::io::{read_label, read_rgb};
use crate::data::{Dataset, Sample, Split};
use crate::error::{Error, Result};

const IMAGE_EXTS: [&str; 5] = ["png", "ppm", "pnm", "pgm", "pbm"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Drive,
    Flat,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drive" => Ok(Layout::Drive),
            "flat" => Ok(Layout::Flat),
            other => Err(Error::Config(format!(
                "unknown dataset layout '{other}' (drive|flat)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub image: PathBuf,
    pub label: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov: Option<PathBuf>,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Load every listed sample, resolving paths against `base`.
    pub fn load_samples(&self, base: &Path) -> Result<Dataset> {
        let mut samples = self
            .samples
            .iter()
            .map(|e| {
                let image_path = base.join(&e.image);
                let image = read_rgb(&image_path)?;
                let label = read_label(&base.join(&e.label))?;
                let fov = e
                    .fov
                    .as_ref()
                    .map(|f| read_label(&base.join(f)))
                    .transpose()?;
                Sample::new(e.id.clone(), image, label, fov, e.split)
                    .map_err(|err| Error::load(&image_path, err.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Dataset { samples })
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
}

fn find_with_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn list_stems(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && ext_ok {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    stems.dedup();
    Ok(stems)
}

fn flat_manifest(root: &Path) -> Result<DatasetManifest> {
    let ids = list_stems(&root.join("images"))?;
    if ids.is_empty() {
        return Err(Error::load(root.join("images"), "no images found"));
    }
    let half = ids.len().div_ceil(2);
    let mut samples = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let image = find_with_stem(&root.join("images"), id).expect("stem was listed");
        let label = find_with_stem(&root.join("labels"), id)
            .ok_or_else(|| Error::load(&image, format!("no label labels/{id}.* for this image")))?;
        let fov = find_with_stem(&root.join("masks"), id);
        let rel = |p: PathBuf| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p);
        samples.push(ManifestEntry {
            id: id.clone(),
            image: rel(image),
            label: rel(label),
            fov: fov.map(rel),
            split: if i < half { Split::Train } else { Split::Test },
        });
    }
    Ok(DatasetManifest { samples })
}

fn drive_manifest(root: &Path) -> Result<DatasetManifest> {
    let mut samples = Vec::new();
    for (dir, tag, split) in [
        ("training", "training", Split::Train),
        ("test", "test", Split::Test),
    ] {
        let images = root.join(dir).join("images");
        let suffix = format!("_{tag}");
        for stem in list_stems(&images)? {
            let Some(id) = stem.strip_suffix(&suffix) else {
                continue;
            };
            let image = find_with_stem(&images, &stem).expect("stem was listed");
            let label =
                find_with_stem(&root.join(dir).join("1st_manual"), &format!("{id}_manual1"))
                    .ok_or_else(|| {
                        Error::load(
                            &image,
                            format!("no label {dir}/1st_manual/{id}_manual1.* for this image"),
                        )
                    })?;
            let fov = find_with_stem(&root.join(dir).join("mask"), &format!("{id}_{tag}_mask"));
            let rel = |p: PathBuf| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p);
            samples.push(ManifestEntry {
                id: id.to_string(),
                image: rel(image),
                label: rel(label),
                fov: fov.map(rel),
                split,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::load(
            root,
            "no DRIVE images found under training/images or test/images",
        ));
    }
    Ok(DatasetManifest { samples })
}

/// Load a dataset from `root`. Samples come back sorted by id.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<(Dataset, DatasetManifest)> {
    if !root.is_dir() {
        return Err(Error::load(root, "dataset root is not a directory"));
    }
    let manifest = match layout {
        Layout::Flat if root.join("manifest.json").is_file() => {
            load_manifest(&root.join("manifest.json"))?
        }
        Layout::Flat => flat_manifest(root)?,
        Layout::Drive => drive_manifest(root)?,
    };
    let mut manifest = manifest;
    manifest.samples.sort_by(|a, b| a.id.cmp(&b.id));
    let ds = manifest.load_samples(root)?;
    Ok((ds, manifest))
}
