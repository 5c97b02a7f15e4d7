//! Grad-CAM heatmaps for the regression output.
//!
//! There is no class score: the predicted age itself is differentiated. Each
//! channel of the chosen convolution is weighted by the spatial mean of
//! `d prediction / d activation`, the weighted sum is ReLU-gated, and the map
//! is scaled so its maximum is 1. Red regions therefore mark evidence that
//! raises the predicted age. [`smooth`] averages maps over noisy copies of
//! the input; the higher-order weighting of Grad-CAM++ is not implemented,
//! hence output is labelled `grad-cam` / `grad-cam-smooth`.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::imageops::{pgm, resize, GrayImage, ResizeMode};
use crate::nn::{backward, forward, Model};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f64>,
}

impl Heatmap {
    fn normalized(width: usize, height: usize, mut values: Vec<f64>) -> Self {
        let max = values.iter().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            for v in &mut values {
                *v /= max;
            }
        }
        Heatmap { width, height, values }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| self.get(x, y))
    }

    /// Share of the total map mass inside the box `[x0, x1) x [y0, y1)`.
    pub fn mass_fraction(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut inside = 0.0;
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                inside += self.get(x, y);
            }
        }
        inside / total
    }
}

/// Index of the last convolution, the default explanation layer.
pub fn default_layer(model: &Model) -> usize {
    model.spec().conv_layer_count() - 1
}

pub fn grad_cam(model: &Model, image: &GrayImage, layer: usize) -> Result<Heatmap> {
    let layers = model.spec().conv_layer_count();
    if layer >= layers {
        return Err(config_err!("layer {layer} does not exist; the model has {layers} convolutions"));
    }
    let cache = forward(model, &model.input_tensor(image)?, None)?;
    let grads = backward(model, &cache, 1.0)?;
    let act = &cache.conv_activations[layer];
    let grad = &grads.conv_activations[layer];
    let (h, w, c) = act.hwc()?;

    let mut weights = vec![0.0; c];
    for px in grad.data().chunks_exact(c) {
        for (wc, g) in weights.iter_mut().zip(px) {
            *wc += g;
        }
    }
    for wc in &mut weights {
        *wc /= (h * w) as f64;
    }
    let values = act
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().zip(&weights).map(|(a, wc)| a * wc).sum::<f64>().max(0.0))
        .collect();
    Ok(Heatmap::normalized(w, h, values))
}

/// Mean Grad-CAM map over `samples` copies of the image with Gaussian noise
/// (clamped to `[0, 1]`), renormalized. One sample without noise reproduces
/// [`grad_cam`] exactly.
pub fn smooth(model: &Model, image: &GrayImage, layer: usize, samples: usize, noise_sd: f64, seed: u64) -> Result<Heatmap> {
    if samples == 0 {
        return Err(config_err!("smoothing needs at least one sample"));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|_| config_err!("invalid noise_sd {noise_sd}"))?;
    let maps = (0..samples)
        .into_par_iter()
        .map(|s| {
            if noise_sd == 0.0 {
                return grad_cam(model, image, layer);
            }
            let mut r = rng::derive(seed, s as u64, 0);
            let noisy = GrayImage::from_fn(image.width(), image.height(), |x, y| {
                image.get(x, y) + noise.sample(&mut r)
            });
            grad_cam(model, &noisy, layer)
        })
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (maps[0].width, maps[0].height);
    let mut sum = vec![0.0; w * h];
    for m in &maps {
        for (s, v) in sum.iter_mut().zip(&m.values) {
            *s += v;
        }
    }
    for s in &mut sum {
        *s /= samples as f64;
    }
    Ok(Heatmap::normalized(w, h, sum))
}

/// PGM of the map upsampled (nearest) to the image size, and PGM of the
/// overlay `0.5 * image + 0.5 * map`.
pub fn export_heatmap(map: &Heatmap, image: &GrayImage) -> Result<(Vec<u8>, Vec<u8>)> {
    let up = resize(&map.to_image(), image.width(), image.height(), ResizeMode::Nearest)?;
    let overlay = GrayImage::from_fn(image.width(), image.height(), |x, y| {
        0.5 * image.get(x, y) + 0.5 * up.get(x, y)
    });
    Ok((pgm::encode(&up), pgm::encode(&overlay)))
}
