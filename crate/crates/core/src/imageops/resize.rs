use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    #[default]
    Bilinear,
}

/// Resamples with pixel-center alignment: output center `i + 0.5` maps to
/// source coordinate `(i + 0.5) * in / out`.
pub fn resize(image: &GrayImage, out_w: usize, out_h: usize, mode: ResizeMode) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(shape_err!("resize target {out_w}x{out_h} has a zero dimension"));
    }
    if (out_w, out_h) == (image.width, image.height) {
        return Ok(image.clone());
    }
    let (sx, sy) = (
        image.width as f64 / out_w as f64,
        image.height as f64 / out_h as f64,
    );
    let out = match mode {
        ResizeMode::Nearest => GrayImage::from_fn(out_w, out_h, |x, y| {
            let src_x = (((x as f64 + 0.5) * sx) as usize).min(image.width - 1);
            let src_y = (((y as f64 + 0.5) * sy) as usize).min(image.height - 1);
            image.get(src_x, src_y)
        }),
        ResizeMode::Bilinear => GrayImage::from_fn(out_w, out_h, |x, y| {
            let (x0, x1, fx) = taps(x, sx, image.width);
            let (y0, y1, fy) = taps(y, sy, image.height);
            let top = lerp(image.get(x0, y0), image.get(x1, y0), fx);
            let bottom = lerp(image.get(x0, y1), image.get(x1, y1), fx);
            lerp(top, bottom, fy)
        }),
    };
    Ok(out)
}

fn taps(i: usize, scale: f64, extent: usize) -> (usize, usize, f64) {
    let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
    let lo = c.floor() as usize;
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, c - lo as f64)
}

// exact when a == b
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
