//! Cohort and age metadata kept beside the annotation file.
//!
//! Columns: `file_name,cohort,age_months`. An empty `age_months` means the
//! age is unknown.

use serde::{Deserialize, Serialize};

use super::{Cohort, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub file_name: String,
    pub cohort: Cohort,
    pub age_months: Option<f64>,
}

pub fn parse_sidecar(text: &str) -> Result<Vec<SidecarRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                offset: e.position().map_or(0, |p| p.byte() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Copies cohort and age onto matching images. Every row must name an image
/// in the dataset; images without a row keep their current metadata.
pub fn apply_sidecar(dataset: &mut Dataset, rows: &[SidecarRow]) -> Result<()> {
    for row in rows {
        let img = dataset
            .images
            .iter_mut()
            .find(|i| i.file_name == row.file_name)
            .ok_or_else(|| Error::Invalid(format!("sidecar names unknown image {:?}", row.file_name)))?;
        img.cohort = row.cohort;
        img.target_age = row.age_months;
    }
    dataset.validate()
}

pub fn to_sidecar(dataset: &Dataset) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for img in &dataset.images {
        writer
            .serialize(SidecarRow {
                file_name: img.file_name.clone(),
                cohort: img.cohort,
                age_months: img.target_age,
            })
            .expect("in-memory CSV write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}
