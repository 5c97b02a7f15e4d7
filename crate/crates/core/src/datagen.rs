//! Synthetic radiograph-like datasets with known ages.
//!
//! Each image shows a hand-shaped silhouette on a dark background with `k`
//! bright, non-overlapping elliptical blobs inside the palm, plus Gaussian
//! pixel noise. The target age is the affine rule `a * k + b`, so a model that
//! learns to count blobs learns the age. The silhouette is emitted as a
//! polygon annotation, which lets the segmentation stage run on the same data.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, Category, Cohort, Dataset, ImageRecord, Point, MAX_AGE_MONTHS};
use crate::error::{config_err, Result};
use crate::imageops::{rasterize, GrayImage};
use crate::rng;

pub const BACKGROUND_LEVEL: f64 = 0.06;
pub const TISSUE_LEVEL: f64 = 0.30;
pub const BLOB_LEVEL: f64 = 0.85;
/// Threshold separating blobs from tissue in noise-free terms.
pub const BLOB_THRESHOLD: f64 = 0.6;
pub const MIN_IMAGE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub image_size: usize,
    /// Inclusive range of blobs per image.
    pub blob_count_range: (usize, usize),
    /// `(months per blob, offset in months)`.
    pub age_rule: (f64, f64),
    pub noise_sd: f64,
    pub seed: u64,
    /// Mean blob semi-axis in pixels; defaults to `image_size / 16`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_radius: Option<f64>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (k_min, k_max) = self.blob_count_range;
        let (a, b) = self.age_rule;
        if self.count == 0 {
            return Err(config_err!("count must be at least 1"));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(config_err!("image_size must be at least {MIN_IMAGE_SIZE}"));
        }
        if k_min > k_max {
            return Err(config_err!("blob_count_range ({k_min}, {k_max}) is reversed"));
        }
        let ages = [a * k_min as f64 + b, a * k_max as f64 + b];
        if ages.iter().any(|age| !(0.0..=MAX_AGE_MONTHS).contains(age)) {
            return Err(config_err!("age rule maps blob counts outside [0, {MAX_AGE_MONTHS}]"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(config_err!("noise_sd must be a finite non-negative number"));
        }
        if let Some(r) = self.blob_radius {
            if !(r >= 1.0 && r <= self.image_size as f64 / 8.0) {
                return Err(config_err!("blob_radius {r} outside [1, image_size/8]"));
            }
        }
        Ok(())
    }

    fn radius(&self) -> f64 {
        self.blob_radius.unwrap_or(self.image_size as f64 / 16.0)
    }

    pub fn age(&self, blobs: usize) -> f64 {
        self.age_rule.0 * blobs as f64 + self.age_rule.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub images: Vec<GrayImage>,
    /// Generator-side blob count per image.
    pub blob_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        u * u + v * v <= 1.0
    }
}

/// Hand outline in unit coordinates: four fingers, a palm, a wrist and a thumb.
const HAND: [(f64, f64); 21] = [
    (0.82, 0.36),
    (0.80, 0.12),
    (0.67, 0.12),
    (0.66, 0.36),
    (0.65, 0.05),
    (0.52, 0.05),
    (0.51, 0.36),
    (0.50, 0.07),
    (0.37, 0.07),
    (0.36, 0.36),
    (0.35, 0.15),
    (0.20, 0.15),
    (0.18, 0.36),
    (0.18, 0.80),
    (0.28, 0.98),
    (0.72, 0.98),
    (0.82, 0.80),
    (0.82, 0.68),
    (0.96, 0.50),
    (0.92, 0.44),
    (0.82, 0.54),
];

/// Region of the palm where blobs are placed, `(x0, y0, x1, y1)` in unit coordinates.
const PALM: (f64, f64, f64, f64) = (0.24, 0.40, 0.76, 0.88);

pub fn hand_polygon(size: usize) -> Vec<Point> {
    let s = size as f64;
    HAND.iter().map(|&(x, y)| Point::new(x * s, y * s)).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let polygon = hand_polygon(spec.image_size);
    let hand = rasterize(&polygon, spec.image_size, spec.image_size)?;
    let rendered = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::derive(spec.seed, 0, i as u64);
            let k = rng.random_range(spec.blob_count_range.0..=spec.blob_count_range.1);
            let blobs = place_blobs(spec, k, &mut rng)
                .ok_or_else(|| config_err!("cannot fit {k} blobs into a {} image", spec.image_size))?;
            Ok((render(spec, &hand, &blobs, &mut rng), k))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dataset = Dataset {
        categories: vec![Category { id: 1, name: "hand".into() }],
        ..Default::default()
    };
    let mut images = Vec::with_capacity(spec.count);
    let mut blob_counts = Vec::with_capacity(spec.count);
    for (i, (image, k)) in rendered.into_iter().enumerate() {
        let id = i as i64 + 1;
        dataset.images.push(ImageRecord {
            id,
            file_name: format!("synth_{id:04}.pgm"),
            width: spec.image_size as u32,
            height: spec.image_size as u32,
            cohort: if i % 2 == 0 { Cohort::Male } else { Cohort::Female },
            target_age: Some(spec.age(k)),
        });
        dataset.annotations.push(Annotation {
            id,
            image_id: id,
            category_id: 1,
            polygon: polygon.clone(),
        });
        images.push(image);
        blob_counts.push(k);
    }
    dataset.validate()?;
    Ok(SynthDataset {
        dataset,
        images,
        blob_counts,
    })
}

// rejection sampling; `None` when the palm cannot hold `k` blobs
fn place_blobs(spec: &SynthSpec, k: usize, rng: &mut rng::Rng) -> Option<Vec<Blob>> {
    let s = spec.image_size as f64;
    let r0 = spec.radius();
    let (x0, y0, x1, y1) = (PALM.0 * s, PALM.1 * s, PALM.2 * s, PALM.3 * s);
    'restart: for _ in 0..200 {
        let mut blobs: Vec<Blob> = Vec::with_capacity(k);
        while blobs.len() < k {
            let mut placed = false;
            for _ in 0..500 {
                let rx = r0 * rng.random_range(0.85..=1.15);
                let ry = r0 * rng.random_range(0.85..=1.15);
                if x1 - x0 <= 2.0 * rx || y1 - y0 <= 2.0 * ry {
                    return None;
                }
                let cand = Blob {
                    cx: rng.random_range(x0 + rx..=x1 - rx),
                    cy: rng.random_range(y0 + ry..=y1 - ry),
                    rx,
                    ry,
                };
                // two pixels of clearance between bounding circles
                let clear = blobs.iter().all(|b| {
                    let d = ((b.cx - cand.cx).powi(2) + (b.cy - cand.cy).powi(2)).sqrt();
                    d > b.rx.max(b.ry) + cand.rx.max(cand.ry) + 2.0
                });
                if clear {
                    blobs.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return Some(blobs);
    }
    None
}

fn render(spec: &SynthSpec, hand: &crate::imageops::Mask, blobs: &[Blob], rng: &mut rng::Rng) -> GrayImage {
    let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise_sd");
    let size = spec.image_size;
    GrayImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let base = if blobs.iter().any(|b| b.contains(px, py)) {
            BLOB_LEVEL
        } else if hand.get(x, y) {
            TISSUE_LEVEL
        } else {
            BACKGROUND_LEVEL
        };
        base + noise.sample(rng)
    })
}
