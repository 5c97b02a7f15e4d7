//! Scanline polygon fill.
//!
//! Pixel `(x, y)` is inside when its center `(x + 0.5, y + 0.5)` is inside the
//! polygon under the even-odd rule. Each scanline collects the edge crossings
//! of the horizontal line through the pixel centers, using the half-open
//! vertical test `(y0 > cy) != (y1 > cy)`; a pixel is set when an odd number
//! of crossings lie strictly to its right. Centers exactly on an edge are
//! therefore resolved the same way a per-pixel ray cast resolves them.

use super::Mask;
use crate::annotation::{Annotation, Point};
use crate::error::{Error, Result};

pub fn rasterize(polygon: &[Point], width: usize, height: usize) -> Result<Mask> {
    if polygon.len() < 3 {
        return Err(Error::Geometry(format!(
            "polygon has {} vertices, need at least 3",
            polygon.len()
        )));
    }
    let mut mask = Mask::empty(width, height);
    let mut crossings: Vec<f64> = Vec::with_capacity(polygon.len());
    let n = polygon.len();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        crossings.clear();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (polygon[i], polygon[j]);
            if (a.y > cy) != (b.y > cy) {
                crossings.push((b.x - a.x) * (cy - a.y) / (b.y - a.y) + a.x);
            }
            j = i;
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(f64::total_cmp);
        // crossings at or left of the current center; total count is even
        let mut left = 0;
        for x in 0..width {
            let cx = x as f64 + 0.5;
            while left < crossings.len() && crossings[left] <= cx {
                left += 1;
            }
            if left % 2 == 1 {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Union of the masks of all given annotations.
pub fn union_mask<'a>(
    annotations: impl IntoIterator<Item = &'a Annotation>,
    width: usize,
    height: usize,
) -> Result<Mask> {
    let mut mask = Mask::empty(width, height);
    for ann in annotations {
        mask.union_with(&rasterize(&ann.polygon, width, height)?)?;
    }
    Ok(mask)
}
