//! COCO instance-segmentation JSON.
//!
//! Only flat polygon segmentations are accepted (`[[x1, y1, x2, y2, ...]]`),
//! one polygon per annotation. Images may carry two extension keys,
//! `cohort` and `target_age`, so that a dataset survives a round trip without
//! its sidecar; standard tools ignore them.

use serde::Deserialize;
use serde_json::{json, Value};

use super::{json_error, Annotation, Category, Cohort, Dataset, ImageRecord, Point};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Doc {
    images: Vec<Image>,
    annotations: Vec<Ann>,
    categories: Vec<Cat>,
}

#[derive(Deserialize)]
struct Image {
    id: i64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    cohort: Option<Cohort>,
    #[serde(default)]
    target_age: Option<f64>,
}

#[derive(Deserialize)]
struct Ann {
    id: i64,
    image_id: i64,
    category_id: i64,
    segmentation: Value,
}

#[derive(Deserialize)]
struct Cat {
    id: i64,
    name: String,
}

pub fn parse_coco(text: &str) -> Result<Dataset> {
    let doc: Doc = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    let annotations = doc
        .annotations
        .into_iter()
        .map(|a| {
            let polygon = segmentation_polygon(&a.segmentation)
                .map_err(|msg| Error::Geometry(format!("annotation {}: {msg}", a.id)))?;
            Ok(Annotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                polygon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        images: doc
            .images
            .into_iter()
            .map(|i| ImageRecord {
                id: i.id,
                file_name: i.file_name,
                width: i.width,
                height: i.height,
                cohort: i.cohort.unwrap_or_default(),
                target_age: i.target_age,
            })
            .collect(),
        annotations,
        categories: doc
            .categories
            .into_iter()
            .map(|c| Category { id: c.id, name: c.name })
            .collect(),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn segmentation_polygon(seg: &Value) -> std::result::Result<Vec<Point>, String> {
    let parts = match seg {
        Value::Array(parts) => parts,
        Value::Object(_) => return Err("RLE segmentation is not supported".into()),
        _ => return Err("segmentation must be a list of polygons".into()),
    };
    let flat = match parts.as_slice() {
        [Value::Array(flat)] => flat,
        [] => return Err("empty segmentation".into()),
        [_] => return Err("segmentation polygon must be a list of numbers".into()),
        _ => return Err(format!("{} polygon parts; exactly one is supported", parts.len())),
    };
    if flat.len() % 2 != 0 {
        return Err(format!("odd coordinate count {}", flat.len()));
    }
    if flat.len() < 6 {
        return Err(format!("{} coordinates; a polygon needs at least 6", flat.len()));
    }
    let coords = flat
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| format!("non-numeric coordinate {v}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
}

/// Serializes to COCO JSON with sorted keys. `bbox`, `area` and `iscrowd`
/// are emitted for compatibility with standard tooling.
pub fn to_coco(dataset: &Dataset) -> String {
    let images: Vec<Value> = dataset
        .images
        .iter()
        .map(|img| {
            let mut v = json!({
                "id": img.id,
                "file_name": img.file_name,
                "width": img.width,
                "height": img.height,
            });
            if img.cohort != Cohort::Unknown {
                v["cohort"] = json!(img.cohort);
            }
            if let Some(age) = img.target_age {
                v["target_age"] = json!(age);
            }
            v
        })
        .collect();
    let annotations: Vec<Value> = dataset
        .annotations
        .iter()
        .map(|a| {
            let flat: Vec<f64> = a.polygon.iter().flat_map(|p| [p.x, p.y]).collect();
            json!({
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "segmentation": [flat],
                "bbox": bbox(&a.polygon),
                "area": shoelace_area(&a.polygon),
                "iscrowd": 0,
            })
        })
        .collect();
    let categories: Vec<Value> = dataset
        .categories
        .iter()
        .map(|c| json!({ "id": c.id, "name": c.name }))
        .collect();
    let doc = json!({
        "images": images,
        "annotations": annotations,
        "categories": categories,
    });
    let mut out = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
    out.push('\n');
    out
}

fn bbox(polygon: &[Point]) -> [f64; 4] {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in polygon {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    [x0, y0, x1 - x0, y1 - y0]
}

/// Unsigned polygon area.
pub fn shoelace_area(polygon: &[Point]) -> f64 {
    let n = polygon.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice.abs() / 2.0
}
