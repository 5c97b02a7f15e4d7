//! Training-time augmentation.
//!
//! [`augment`] samples every transform independently and applies them in a
//! fixed order: horizontal flip, vertical flip, shift, rotation, zoom,
//! brightness. Geometric transforms use inverse mapping with nearest-neighbour
//! sampling, so values stay in the input's value set; pixels that map outside
//! the frame are filled with [`BACKGROUND`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GrayImage, BACKGROUND};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    /// Probability of a left-right flip.
    pub flip_h: f64,
    /// Probability of a top-bottom flip.
    pub flip_v: f64,
    /// Largest shift per axis, as a fraction of that side.
    pub max_shift: f64,
    /// Largest rotation magnitude in degrees.
    pub max_rotate: f64,
    pub brightness_range: (f64, f64),
    pub zoom_range: (f64, f64),
}

impl Default for AugmentSpec {
    /// The no-op spec.
    fn default() -> Self {
        AugmentSpec {
            flip_h: 0.0,
            flip_v: 0.0,
            max_shift: 0.0,
            max_rotate: 0.0,
            brightness_range: (1.0, 1.0),
            zoom_range: (1.0, 1.0),
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("flip_h", self.flip_h), ("flip_v", self.flip_v)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("{name} probability {p} outside [0, 1]"));
            }
        }
        if !(0.0..=0.5).contains(&self.max_shift) {
            return Err(config_err!("max_shift {} outside [0, 0.5]", self.max_shift));
        }
        if !(0.0..=180.0).contains(&self.max_rotate) {
            return Err(config_err!("max_rotate {} outside [0, 180]", self.max_rotate));
        }
        let (blo, bhi) = self.brightness_range;
        let (zlo, zhi) = self.zoom_range;
        if !(blo.is_finite() && bhi.is_finite() && 0.0 <= blo && blo <= bhi) {
            return Err(config_err!("brightness range ({blo}, {bhi}) must satisfy 0 <= lo <= hi"));
        }
        if !(zlo.is_finite() && zhi.is_finite() && 0.0 < zlo && zlo <= zhi) {
            return Err(config_err!("zoom range ({zlo}, {zhi}) must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

pub fn augment<R: Rng + ?Sized>(image: &GrayImage, spec: &AugmentSpec, rng: &mut R) -> GrayImage {
    let mut out = image.clone();
    if rng.random::<f64>() < spec.flip_h {
        out = flip_horizontal(&out);
    }
    if rng.random::<f64>() < spec.flip_v {
        out = flip_vertical(&out);
    }
    let fx = uniform(rng, -spec.max_shift, spec.max_shift);
    let fy = uniform(rng, -spec.max_shift, spec.max_shift);
    let (dx, dy) = (
        (fx * out.width as f64).round() as isize,
        (fy * out.height as f64).round() as isize,
    );
    if dx != 0 || dy != 0 {
        out = shift(&out, dx, dy);
    }
    let degrees = uniform(rng, -spec.max_rotate, spec.max_rotate);
    if degrees != 0.0 {
        out = rotate(&out, degrees);
    }
    let scale = uniform(rng, spec.zoom_range.0, spec.zoom_range.1);
    if scale != 1.0 {
        out = zoom(&out, scale);
    }
    let gain = uniform(rng, spec.brightness_range.0, spec.brightness_range.1);
    if gain != 1.0 {
        out = brightness(&out, gain);
    }
    out
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn flip_horizontal(image: &GrayImage) -> GrayImage {
    let w = image.width;
    GrayImage::from_fn(w, image.height, |x, y| image.get(w - 1 - x, y))
}

pub fn flip_vertical(image: &GrayImage) -> GrayImage {
    let h = image.height;
    GrayImage::from_fn(image.width, h, |x, y| image.get(x, h - 1 - y))
}

/// Moves content right by `dx` and down by `dy` pixels.
pub fn shift(image: &GrayImage, dx: isize, dy: isize) -> GrayImage {
    GrayImage::from_fn(image.width, image.height, |x, y| {
        sample(image, x as f64 - dx as f64 + 0.5, y as f64 - dy as f64 + 0.5)
    })
}

/// Rotates about the image center; positive angles turn clockwise on screen
/// (y axis pointing down).
pub fn rotate(image: &GrayImage, degrees: f64) -> GrayImage {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = (image.width as f64 / 2.0, image.height as f64 / 2.0);
    GrayImage::from_fn(image.width, image.height, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        sample(image, cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    })
}

/// Scales about the image center; factors above 1 magnify.
pub fn zoom(image: &GrayImage, factor: f64) -> GrayImage {
    let (cx, cy) = (image.width as f64 / 2.0, image.height as f64 / 2.0);
    GrayImage::from_fn(image.width, image.height, |x, y| {
        sample(
            image,
            cx + (x as f64 + 0.5 - cx) / factor,
            cy + (y as f64 + 0.5 - cy) / factor,
        )
    })
}

/// Multiplies intensities by `gain`, clamping to `[0, 1]`.
pub fn brightness(image: &GrayImage, gain: f64) -> GrayImage {
    GrayImage::from_fn(image.width, image.height, |x, y| image.get(x, y) * gain)
}

// nearest-neighbour lookup at continuous coordinates
fn sample(image: &GrayImage, sx: f64, sy: f64) -> f64 {
    let (fx, fy) = (sx.floor(), sy.floor());
    if fx < 0.0 || fy < 0.0 || fx >= image.width as f64 || fy >= image.height as f64 {
        return BACKGROUND;
    }
    image.get(fx as usize, fy as usize)
}
