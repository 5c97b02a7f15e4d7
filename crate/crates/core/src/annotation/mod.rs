//! Polygon annotations for hand radiographs.
//!
//! The in-memory [`Dataset`] mirrors the COCO instance layout (images,
//! annotations, categories). [`coco`] and [`via`] parse the two supported
//! on-disk formats; [`sidecar`] attaches cohort and age metadata that neither
//! format carries.

pub mod coco;
pub mod sidecar;
pub mod via;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coco::{parse_coco, to_coco};
pub use sidecar::{apply_sidecar, parse_sidecar, to_sidecar, SidecarRow};
pub use via::{parse_via, parse_via_with};

/// Largest accepted target age, in months.
pub const MAX_AGE_MONTHS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Male => "male",
            Cohort::Female => "female",
            Cohort::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Cohort::Male),
            "female" | "f" => Ok(Cohort::Female),
            "" | "unknown" => Ok(Cohort::Unknown),
            other => Err(Error::Invalid(format!("unknown cohort {other:?}"))),
        }
    }
}

/// A polygon vertex in pixel coordinates; sub-pixel values are kept as is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: i64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub cohort: Cohort,
    /// Target bone age in months.
    pub target_age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: i64,
    pub image_id: i64,
    pub category_id: i64,
    pub polygon: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl Dataset {
    /// Checks every type invariant: id uniqueness, referential integrity,
    /// image dimensions, age range and polygon geometry.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(Error::Invalid(format!("duplicate image id {}", img.id)));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::Invalid(format!(
                    "image {} has zero dimension {}x{}",
                    img.id, img.width, img.height
                )));
            }
            if let Some(age) = img.target_age {
                if !(0.0..=MAX_AGE_MONTHS).contains(&age) {
                    return Err(Error::Invalid(format!(
                        "image {} target age {age} outside [0, {MAX_AGE_MONTHS}]",
                        img.id
                    )));
                }
            }
        }
        let mut category_ids = HashSet::new();
        for cat in &self.categories {
            if !category_ids.insert(cat.id) {
                return Err(Error::Invalid(format!("duplicate category id {}", cat.id)));
            }
        }
        let mut annotation_ids = HashSet::new();
        for ann in &self.annotations {
            if !annotation_ids.insert(ann.id) {
                return Err(Error::Invalid(format!("duplicate annotation id {}", ann.id)));
            }
            let img = self.image(ann.image_id).ok_or(Error::Referential {
                kind: "image",
                id: ann.image_id,
            })?;
            if !category_ids.contains(&ann.category_id) {
                return Err(Error::Referential {
                    kind: "category",
                    id: ann.category_id,
                });
            }
            check_polygon(&ann.polygon, img.width, img.height)
                .map_err(|e| Error::Geometry(format!("annotation {}: {e}", ann.id)))?;
        }
        Ok(())
    }

    pub fn image(&self, id: i64) -> Option<&ImageRecord> {
        self.images.iter().find(|img| img.id == id)
    }

    pub fn annotations_for(&self, image_id: i64) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }

    pub fn category_id(&self, name: &str) -> Option<i64> {
        self.categories.iter().find(|c| c.name == name).map(|c| c.id)
    }
}

fn check_polygon(polygon: &[Point], width: u32, height: u32) -> std::result::Result<(), String> {
    if polygon.len() < 3 {
        return Err(format!("polygon has {} vertices, need at least 3", polygon.len()));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    for p in polygon {
        if !p.x.is_finite() || !p.y.is_finite() || p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h {
            return Err(format!("vertex ({}, {}) outside {width}x{height} frame", p.x, p.y));
        }
    }
    Ok(())
}

/// Converts a serde_json error position into a byte offset within `text`.
pub(crate) fn json_error(text: &str, err: &serde_json::Error) -> Error {
    let mut offset = 0usize;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == err.line() {
            offset += err.column().saturating_sub(1).min(line.len());
            break;
        }
        offset += line.len();
    }
    Error::Parse {
        offset: offset.min(text.len()),
        message: err.to_string(),
    }
}
