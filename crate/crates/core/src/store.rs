//! On-disk dataset directories and staged artifact writes.
//!
//! A dataset directory holds
//!
//! ```text
//! annotations.json   COCO
//! labels.csv         file_name,cohort,age_months
//! images/<file_name> 8-bit PGM
//! ```
//!
//! [`Staging`] collects every output of a command in memory and publishes it
//! only on [`Staging::commit`]: each file or directory is first written under
//! a `.partial` name and then renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::annotation::{apply_sidecar, parse_coco, parse_sidecar, to_coco, to_sidecar, Dataset};
use crate::error::{Error, Result};
use crate::imageops::{pgm, GrayImage};

pub const ANNOTATIONS: &str = "annotations.json";
pub const LABELS: &str = "labels.csv";
pub const IMAGES: &str = "images";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a dataset directory. The sidecar, when present, overrides cohort and
/// age from the COCO file. Images are returned in dataset order.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, Vec<GrayImage>)> {
    let mut dataset = parse_coco(&read_text(&dir.join(ANNOTATIONS))?)?;
    let labels = dir.join(LABELS);
    if labels.exists() {
        apply_sidecar(&mut dataset, &parse_sidecar(&read_text(&labels)?)?)?;
    }
    let images = load_images(dir, &dataset)?;
    Ok((dataset, images))
}

/// Reads `images/<file_name>` for every record, checking dimensions.
pub fn load_images(dir: &Path, dataset: &Dataset) -> Result<Vec<GrayImage>> {
    dataset
        .images
        .iter()
        .map(|rec| {
            let img = pgm::read(dir.join(IMAGES).join(&rec.file_name))?;
            if (img.width(), img.height()) != (rec.width as usize, rec.height as usize) {
                return Err(Error::Invalid(format!(
                    "{}: image is {}x{} but annotated as {}x{}",
                    rec.file_name,
                    img.width(),
                    img.height(),
                    rec.width,
                    rec.height
                )));
            }
            Ok(img)
        })
        .collect()
}

/// Stages a dataset directory; `extra` adds files under other subdirectories.
pub fn stage_dataset(
    staging: &mut Staging,
    dir: &Path,
    dataset: &Dataset,
    images: &[GrayImage],
    extra: Vec<(PathBuf, Vec<u8>)>,
) {
    let mut files = vec![
        (PathBuf::from(ANNOTATIONS), to_coco(dataset).into_bytes()),
        (PathBuf::from(LABELS), to_sidecar(dataset).into_bytes()),
    ];
    for (rec, img) in dataset.images.iter().zip(images) {
        files.push((Path::new(IMAGES).join(&rec.file_name), pgm::encode(img)));
    }
    files.extend(extra);
    staging.dir(dir, files);
}

#[derive(Debug, Default)]
pub struct Staging {
    files: BTreeMap<PathBuf, Vec<u8>>,
    dirs: BTreeMap<PathBuf, Vec<(PathBuf, Vec<u8>)>>,
}

impl Staging {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), bytes.into());
    }

    /// A directory replaced as a whole; `files` are relative to it.
    pub fn dir(&mut self, path: impl Into<PathBuf>, files: Vec<(PathBuf, Vec<u8>)>) {
        self.dirs.insert(path.into(), files);
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.dirs.keys().chain(self.files.keys()).map(PathBuf::as_path)
    }

    pub fn commit(self) -> Result<()> {
        let mut renames = Vec::new();
        for (dir, files) in self.dirs {
            let tmp = partial_name(&dir);
            remove_any(&tmp)?;
            for (rel, bytes) in files {
                let path = tmp.join(rel);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
            renames.push((tmp, dir));
        }
        for (path, bytes) in self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let tmp = partial_name(&path);
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            renames.push((tmp, path));
        }
        for (tmp, target) in renames {
            if target.is_dir() {
                remove_any(&target)?;
            }
            fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    }
}

fn partial_name(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

fn remove_any(path: &Path) -> Result<()> {
    let result = if path.is_dir() {
        fs::remove_dir_all(path)
    } else if path.exists() {
        fs::remove_file(path)
    } else {
        return Ok(());
    };
    result.map_err(|e| Error::io(path, e))
}
