//! Single-channel raster operations.
//!
//! Pixel `(x, y)` lives at row-major index `y * width + x`; intensities are in
//! `[0, 1]`.

pub mod augment;
pub mod pgm;
pub mod raster;
pub mod resize;

use crate::error::{shape_err, Error, Result};

pub use augment::{augment, flip_horizontal, flip_vertical, rotate, shift, zoom, AugmentSpec};
pub use raster::{rasterize, union_mask};
pub use resize::{resize, ResizeMode};

/// Intensity written outside masks and into out-of-frame pixels.
pub const BACKGROUND: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!("{} values for a {width}x{height} image", data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds an image from an arbitrary function, clamping results to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(shape_err!("{} bits for a {width}x{height} mask", bits.len()));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Elementwise OR with a mask of the same size.
    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(shape_err!(
                "mask union {}x{} vs {}x{}",
                self.width,
                self.height,
                other.width,
                other.height
            ));
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// Mask as an image with 1 for set bits and 0 elsewhere.
    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Tight box over set bits as `(x0, y0, x1, y1)`, inclusive-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Keeps pixels under the mask and replaces the rest with `background`.
pub fn apply_mask(image: &GrayImage, mask: &Mask, background: f64) -> Result<GrayImage> {
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(shape_err!(
            "image {}x{} vs mask {}x{}",
            image.width,
            image.height,
            mask.width,
            mask.height
        ));
    }
    if !(0.0..=1.0).contains(&background) {
        return Err(Error::Invalid(format!("background {background} outside [0, 1]")));
    }
    let data = image
        .data
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &on)| if on { v } else { background })
        .collect();
    Ok(GrayImage {
        width: image.width,
        height: image.height,
        data,
    })
}

/// `None` when the mask is empty.
pub fn bounding_box(mask: &Mask) -> Option<BoundingBox> {
    let mut bb: Option<BoundingBox> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let b = bb.get_or_insert(BoundingBox { x0: x, y0: y, x1: x + 1, y1: y + 1 });
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x + 1);
            b.y1 = b.y1.max(y + 1);
        }
    }
    bb
}
