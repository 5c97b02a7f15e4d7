//! Finite-difference checks returning the largest relative error.

use boneage_core::nn::layers::{
    conv2d, conv2d_backward, dense, dense_backward, gap, gap_backward, maxpool2, maxpool2_backward, mse_loss, relu,
    relu_backward,
};
use boneage_core::nn::{backward, forward, Activation, ConvBlock, Head, InputShape, Model, ModelSpec, TargetScaling, Tensor};
use rand::Rng;

use super::{max_fd_error, rng, uniform};

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn weighted_sum(t: &Tensor, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// `(h, w, cin, cout, stride, padding)` of the convolution cases.
pub const CONV_CASES: [(usize, usize, usize, usize, usize, usize); 3] =
    [(5, 6, 2, 3, 1, 1), (7, 5, 3, 2, 2, 1), (6, 6, 1, 4, 1, 0)];

pub fn conv_error((h, w, cin, cout, stride, padding): (usize, usize, usize, usize, usize, usize), seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = uniform(&mut r, h * w * cin, -1.0, 1.0);
    let k = uniform(&mut r, cout * 9 * cin, -1.0, 1.0);
    let b = uniform(&mut r, cout, -1.0, 1.0);
    let input = tensor(&[h, w, cin], x.clone());
    let kernels = tensor(&[cout, 3, 3, cin], k.clone());
    let out = conv2d(&input, &kernels, &b, stride, padding).unwrap();
    let upstream = uniform(&mut r, out.len(), -1.0, 1.0);
    let g = tensor(out.shape(), upstream.clone());
    let (gx, gk, gb) = conv2d_backward(&input, &kernels, &b, stride, padding, &g).unwrap();

    let loss = |x: &[f64], k: &[f64], b: &[f64]| {
        let out = conv2d(&tensor(&[h, w, cin], x.to_vec()), &tensor(&[cout, 3, 3, cin], k.to_vec()), b, stride, padding).unwrap();
        weighted_sum(&out, &upstream)
    };
    let ex = max_fd_error(&x, gx.data(), |v| loss(v, &k, &b));
    let ek = max_fd_error(&k, gk.data(), |v| loss(&x, v, &b));
    let eb = max_fd_error(&b, &gb, |v| loss(&x, &k, v));
    ex.max(ek).max(eb)
}

pub fn relu_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    // keep entries away from the kink
    let x: Vec<f64> = (0..20)
        .map(|_| {
            let v: f64 = r.random_range(0.05..1.0);
            if r.random_bool(0.5) { v } else { -v }
        })
        .collect();
    let up = uniform(&mut r, 20, -1.0, 1.0);
    let g = relu_backward(&tensor(&[20], x.clone()), &tensor(&[20], up.clone())).unwrap();
    max_fd_error(&x, g.data(), |v| weighted_sum(&relu(&tensor(&[20], v.to_vec())), &up))
}

pub fn maxpool_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    // distinct values spaced well beyond the probe step
    let mut x: Vec<f64> = (0..4 * 6 * 2).map(|i| i as f64 * 0.01).collect();
    for i in (1..x.len()).rev() {
        x.swap(i, r.random_range(0..=i));
    }
    let shape = [4, 6, 2];
    let (out, arg) = maxpool2(&tensor(&shape, x.clone())).unwrap();
    let up = uniform(&mut r, out.len(), -1.0, 1.0);
    let g = maxpool2_backward(&shape, &arg, &tensor(out.shape(), up.clone())).unwrap();
    max_fd_error(&x, g.data(), |v| weighted_sum(&maxpool2(&tensor(&shape, v.to_vec())).unwrap().0, &up))
}

pub fn gap_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [3, 4, 5];
    let x = uniform(&mut r, 60, -1.0, 1.0);
    let up = uniform(&mut r, 5, -1.0, 1.0);
    let g = gap_backward(&shape, &up).unwrap();
    max_fd_error(&x, g.data(), |v| {
        gap(&tensor(&shape, v.to_vec())).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
    })
}

pub fn dense_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (nin, nout) = (6, 4);
    let x = uniform(&mut r, nin, -1.0, 1.0);
    let w = uniform(&mut r, nin * nout, -1.0, 1.0);
    let b = uniform(&mut r, nout, -1.0, 1.0);
    let up = uniform(&mut r, nout, -1.0, 1.0);
    let (gx, gw, gb) = dense_backward(&x, &w, &up).unwrap();
    let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
        dense(x, w, b).unwrap().iter().zip(&up).map(|(a, c)| a * c).sum()
    };
    let ex = max_fd_error(&x, &gx, |v| loss(v, &w, &b));
    let ew = max_fd_error(&w, &gw, |v| loss(&x, v, &b));
    let eb = max_fd_error(&b, &gb, |v| loss(&x, &w, v));
    ex.max(ew).max(eb)
}

pub fn mse_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pred = uniform(&mut r, 7, -3.0, 3.0);
    let target = uniform(&mut r, 7, -3.0, 3.0);
    let (_, g) = mse_loss(&pred, &target).unwrap();
    max_fd_error(&pred, &g, |p| mse_loss(p, &target).unwrap().0)
}

pub fn tiny_spec(activation: Activation) -> ModelSpec {
    ModelSpec {
        input: InputShape { height: 8, width: 8, channels: 2 },
        blocks: vec![
            ConvBlock::new(4, 2),
            ConvBlock { stride: 2, ..ConvBlock::new(6, 1) },
        ],
        dense_width: 10,
        dense_activation: activation,
        dropout_rate: 0.3,
        head: Head::RidgeLayer,
        target: TargetScaling { offset: 50.0, scale: 7.0 },
    }
}

/// Every parameter of the composed network against central differences of
/// the prediction, with a fixed dropout mask. Returns `(parameters, error)`.
pub fn composed_error(activation: Activation, seed: u64) -> (usize, f64) {
    let mut model = Model::new(tiny_spec(activation), seed).unwrap();
    let mut r = rng(seed + 100);
    // non-zero biases so that ReLU units are not all on the same side
    let biases: Vec<usize> = model
        .layout()
        .iter()
        .filter(|b| b.name.ends_with(".bias"))
        .flat_map(|b| b.offset..b.offset + b.len)
        .collect();
    for i in biases {
        model.params_mut()[i] = r.random_range(-0.2..0.2);
    }
    let input = tensor(&[8, 8, 2], uniform(&mut r, 128, 0.0, 1.0));
    let mask: Vec<f64> = (0..10).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 / 0.7 }).collect();
    let cache = forward(&model, &input, Some(&mask)).unwrap();
    let grads = backward(&model, &cache, 1.0).unwrap();
    let theta = model.params().to_vec();
    let err = max_fd_error(&theta, &grads.params, |p| {
        let mut m = model.clone();
        m.set_params(p.to_vec()).unwrap();
        forward(&m, &input, Some(&mask)).unwrap().prediction
    });
    (model.param_count(), err)
}
