//! VGG Image Annotator (VIA 2.x) project files.
//!
//! Accepts either a full project export (with `_via_img_metadata`) or the bare
//! annotation export, whose top level is the image metadata map. VIA does not
//! record pixel dimensions, so they come from `file_attributes.width` /
//! `file_attributes.height` when present, otherwise from a caller-supplied
//! resolver (e.g. reading the image header).
//!
//! Images are numbered from 1 in metadata-key order (keys are sorted), and
//! annotations from 1 in the order their regions appear. Category names come
//! from the first string found under `name`, `label`, `category` or `class`
//! in `region_attributes`; regions without one are labelled `hand`.

use serde_json::{Map, Value};

use super::{json_error, Annotation, Category, Dataset, ImageRecord, Point};
use crate::error::{Error, Result};

pub const DEFAULT_CATEGORY: &str = "hand";

pub fn parse_via(text: &str) -> Result<Dataset> {
    parse_via_with(text, |_| None)
}

pub fn parse_via_with(text: &str, dims: impl Fn(&str) -> Option<(u32, u32)>) -> Result<Dataset> {
    let top: Value = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    let metadata = match top.get("_via_img_metadata") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(invalid("_via_img_metadata must be an object")),
        None => top
            .as_object()
            .ok_or_else(|| invalid("VIA document must be a JSON object"))?,
    };

    let mut dataset = Dataset::default();
    for (key, entry) in metadata {
        let entry = entry
            .as_object()
            .ok_or_else(|| invalid(format!("image entry {key:?} is not an object")))?;
        let file_name = entry
            .get("filename")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid(format!("image entry {key:?} has no filename")))?
            .to_string();
        let (width, height) = attr_dims(entry.get("file_attributes"))
            .or_else(|| dims(&file_name))
            .ok_or_else(|| invalid(format!("no pixel dimensions known for {file_name:?}")))?;
        let image_id = dataset.images.len() as i64 + 1;
        dataset.images.push(ImageRecord {
            id: image_id,
            file_name,
            width,
            height,
            cohort: Default::default(),
            target_age: None,
        });

        let regions: Vec<&Value> = match entry.get("regions") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(r)) => r.iter().collect(),
            // VIA 1.x stored regions keyed by index
            Some(Value::Object(r)) => r.values().collect(),
            Some(_) => return Err(invalid("regions must be a list")),
        };
        for region in regions {
            let polygon = region_polygon(region)?;
            let name = region_category(region);
            let category_id = match dataset.category_id(&name) {
                Some(id) => id,
                None => {
                    let id = dataset.categories.len() as i64 + 1;
                    dataset.categories.push(Category { id, name });
                    id
                }
            };
            dataset.annotations.push(Annotation {
                id: dataset.annotations.len() as i64 + 1,
                image_id,
                category_id,
                polygon,
            });
        }
    }
    dataset.validate()?;
    Ok(dataset)
}

fn region_polygon(region: &Value) -> Result<Vec<Point>> {
    let shape = region
        .get("shape_attributes")
        .and_then(Value::as_object)
        .ok_or_else(|| invalid("region has no shape_attributes"))?;
    let name = shape.get("name").and_then(Value::as_str).unwrap_or("");
    if name != "polygon" {
        return Err(Error::UnsupportedShape(name.to_string()));
    }
    let xs = number_list(shape, "all_points_x")?;
    let ys = number_list(shape, "all_points_y")?;
    if xs.len() != ys.len() {
        return Err(Error::Geometry(format!(
            "all_points_x has {} entries but all_points_y has {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Geometry(format!("polygon has {} vertices, need at least 3", xs.len())));
    }
    Ok(xs.into_iter().zip(ys).map(|(x, y)| Point::new(x, y)).collect())
}

fn number_list(shape: &Map<String, Value>, key: &str) -> Result<Vec<f64>> {
    shape
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry(format!("polygon is missing {key}")))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::Geometry(format!("non-numeric entry {v} in {key}")))
        })
        .collect()
}

fn region_category(region: &Value) -> String {
    let attrs = region.get("region_attributes").and_then(Value::as_object);
    ["name", "label", "category", "class"]
        .iter()
        .find_map(|k| attrs?.get(*k)?.as_str().filter(|s| !s.is_empty()))
        .unwrap_or(DEFAULT_CATEGORY)
        .to_string()
}

fn attr_dims(attrs: Option<&Value>) -> Option<(u32, u32)> {
    let attrs = attrs?.as_object()?;
    let get = |k: &str| -> Option<u32> {
        match attrs.get(k)? {
            Value::Number(n) => n.as_u64().and_then(|v| u32::try_from(v).ok()),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        }
    };
    Some((get("width")?, get("height")?))
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
