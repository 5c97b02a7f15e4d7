mod common;

use boneage_core::explain::{default_layer, export_heatmap, grad_cam, smooth, Heatmap};
use boneage_core::imageops::{pgm, GrayImage};
use boneage_core::nn::{forward, Model};
use boneage_core::Error;
use common::constructed::{detector_model, quadrant_image, SIZE};
use rand_distr::{Distribution, Normal};

const HALF: usize = SIZE / 2;

fn assert_normalized(map: &Heatmap) {
    assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
    let max = map.values.iter().copied().fold(0.0, f64::max);
    assert!(max == 1.0 || map.values.iter().all(|&v| v == 0.0));
}

#[test]
fn heatmap_is_normalized_channel_zero_activation() {
    let model = detector_model(1.0);
    let img = GrayImage::from_fn(SIZE, SIZE, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
    let map = grad_cam(&model, &img, 0).unwrap();
    assert_normalized(&map);
    let cache = forward(&model, &model.input_tensor(&img).unwrap(), None).unwrap();
    let a0: Vec<f64> = cache.conv_activations[0].data().chunks(2).map(|px| px[0].max(0.0)).collect();
    let max = a0.iter().copied().fold(0.0, f64::max);
    for (m, a) in map.values.iter().zip(&a0) {
        assert!((m - a / max).abs() < 1e-12);
    }
}

#[test]
fn constant_activation_gives_uniform_ones() {
    let map = grad_cam(&detector_model(1.0), &GrayImage::filled(SIZE, SIZE, 0.8), 0).unwrap();
    assert!(map.values.iter().all(|&v| v == 1.0));
}

#[test]
fn zero_gradient_gives_zero_map() {
    let map = grad_cam(&detector_model(0.0), &quadrant_image(), 0).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0));
}

#[test]
fn negative_evidence_is_gated() {
    // a negative head weight flips channel 0's weight; ReLU removes it
    let map = grad_cam(&detector_model(-1.0), &quadrant_image(), 0).unwrap();
    assert!(map.values.iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_layer_is_config_error() {
    let model = detector_model(1.0);
    assert_eq!(default_layer(&model), 0);
    assert!(matches!(grad_cam(&model, &quadrant_image(), 1), Err(Error::Config(_))));
    assert!(matches!(smooth(&model, &quadrant_image(), 0, 0, 0.1, 1), Err(Error::Config(_))));
}

#[test]
fn quadrant_model_localizes() {
    let map = grad_cam(&detector_model(1.0), &quadrant_image(), 0).unwrap();
    let inside = map.mass_fraction(0, 0, HALF, HALF);
    assert!(inside >= 0.5, "{inside}");
    assert_eq!(inside, 1.0);
}

#[test]
fn single_noiseless_sample_reduces_to_grad_cam() {
    let model = detector_model(1.0);
    for img in [quadrant_image(), GrayImage::filled(SIZE, SIZE, 0.3)] {
        assert_eq!(smooth(&model, &img, 0, 1, 0.0, 99).unwrap(), grad_cam(&model, &img, 0).unwrap());
    }
}

#[test]
fn smoothing_is_seeded() {
    let model = detector_model(1.0);
    let a = smooth(&model, &quadrant_image(), 0, 8, 0.2, 5).unwrap();
    let b = smooth(&model, &quadrant_image(), 0, 8, 0.2, 5).unwrap();
    let c = smooth(&model, &quadrant_image(), 0, 8, 0.2, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_normalized(&a);
}

/// One map on a noisy copy of the quadrant image, drawn the same way smooth draws its samples.
fn single_noisy_map(model: &Model, sd: f64, seed: u64) -> Heatmap {
    let noise = Normal::new(0.0, sd).unwrap();
    let mut r = common::rng(seed);
    let clean = quadrant_image();
    let noisy = GrayImage::from_fn(SIZE, SIZE, |x, y| clean.get(x, y) + noise.sample(&mut r));
    grad_cam(model, &noisy, 0).unwrap()
}

#[test]
fn smoothing_localizes_at_least_as_well_as_one_noisy_sample() {
    let model = detector_model(1.0);
    let smoothed = smooth(&model, &quadrant_image(), 0, 32, 0.2, 7).unwrap().mass_fraction(0, 0, HALF, HALF);
    let single = single_noisy_map(&model, 0.2, 7).mass_fraction(0, 0, HALF, HALF);
    println!("quadrant mass: smoothed {smoothed:.6}, single noisy {single:.6}");
    assert!(smoothed >= single, "smoothed {smoothed} < single {single}");
    // pinned from the first run
    assert!((smoothed - SMOOTHED_MASS).abs() < 1e-6, "{smoothed}");
}

const SMOOTHED_MASS: f64 = 0.987318;

#[test]
fn export_golden_pair() {
    let map = Heatmap { width: 2, height: 2, values: vec![0.0, 0.5, 1.0, 0.25] };
    let img = GrayImage::from_fn(4, 4, |x, y| (x + 4 * y) as f64 / 15.0);
    let (heat, overlay) = export_heatmap(&map, &img).unwrap();
    // nearest upsampling: top-left 2x2 block is 0, top-right 0.5 -> 128
    let raster = &heat[heat.len() - 16..];
    assert_eq!(&raster[..4], &[0, 0, 128, 128]);
    assert_eq!(raster[8], 255);
    common::check_golden("heat.pgm", &heat);
    common::check_golden("overlay.pgm", &overlay);
    let decoded = pgm::decode(&overlay).unwrap();
    assert!((decoded.get(3, 3) - (0.5 + 0.5 * 0.25)).abs() <= 0.5 / 255.0);
}
