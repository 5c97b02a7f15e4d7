//! Layer primitives with exact backward passes.
//!
//! Feature maps are HWC tensors. Convolution kernels are laid out as
//! `[out_channels, 3, 3, in_channels]` so that the innermost loop runs over
//! contiguous input channels.

use rand::Rng;

use super::Tensor;
use crate::error::{config_err, shape_err, Result};

pub const KERNEL: usize = 3;

/// Output extent of a 3x3 convolution along one axis.
pub fn conv_extent(input: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < KERNEL || stride == 0 {
        return None;
    }
    Some((padded - KERNEL) / stride + 1)
}

/// Geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(in_h: usize, in_w: usize, in_c: usize, out_c: usize, stride: usize, padding: usize) -> Result<Self> {
        let out_h = conv_extent(in_h, stride, padding);
        let out_w = conv_extent(in_w, stride, padding);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) if out_h > 0 && out_w > 0 => Ok(ConvGeom {
                in_h,
                in_w,
                in_c,
                out_h,
                out_w,
                out_c,
                stride,
                padding,
            }),
            _ => Err(shape_err!(
                "convolution of {in_h}x{in_w} with stride {stride}, padding {padding} has no output"
            )),
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.out_c * KERNEL * KERNEL * self.in_c
    }

    // input row/column feeding output index `o` through kernel tap `k`
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

pub(crate) fn conv_forward_raw(g: &ConvGeom, input: &[f64], kernels: &[f64], bias: &[f64], out: &mut [f64]) {
    let (cin, cout) = (g.in_c, g.out_c);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let acc = &mut out[(oy * g.out_w + ox) * cout..][..cout];
            acc.copy_from_slice(bias);
            for ky in 0..KERNEL {
                let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                for kx in 0..KERNEL {
                    let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                    let x = &input[(iy * g.in_w + ix) * cin..][..cin];
                    for (oc, a) in acc.iter_mut().enumerate() {
                        let k = &kernels[((oc * KERNEL + ky) * KERNEL + kx) * cin..][..cin];
                        *a += dot(k, x);
                    }
                }
            }
        }
    }
}

/// Accumulates kernel and bias gradients; returns the input gradient when requested.
pub(crate) fn conv_backward_raw(
    g: &ConvGeom,
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let (cin, cout) = (g.in_c, g.out_c);
    let mut grad_in = need_input_grad.then(|| vec![0.0; g.in_h * g.in_w * cin]);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let go = &grad_out[(oy * g.out_w + ox) * cout..][..cout];
            for (b, &v) in grad_bias.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..KERNEL {
                let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                for kx in 0..KERNEL {
                    let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                    let at = (iy * g.in_w + ix) * cin;
                    let x = &input[at..][..cin];
                    for (oc, &gv) in go.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let k_at = ((oc * KERNEL + ky) * KERNEL + kx) * cin;
                        axpy(gv, x, &mut grad_kernels[k_at..][..cin]);
                        if let Some(gi) = grad_in.as_mut() {
                            axpy(gv, &kernels[k_at..][..cin], &mut gi[at..][..cin]);
                        }
                    }
                }
            }
        }
    }
    grad_in
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn conv_geom_for(input: &Tensor, kernels: &Tensor, bias: &[f64], stride: usize, padding: usize) -> Result<ConvGeom> {
    let (h, w, cin) = input.hwc()?;
    let (cout, kh, kw, kcin) = match kernels.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(shape_err!("kernels must be [out, 3, 3, in], got {:?}", kernels.shape())),
    };
    if (kh, kw) != (KERNEL, KERNEL) {
        return Err(shape_err!("kernel spatial size must be 3x3, got {kh}x{kw}"));
    }
    if kcin != cin {
        return Err(shape_err!("kernels expect {kcin} input channels, input has {cin}"));
    }
    if bias.len() != cout {
        return Err(shape_err!("{} biases for {cout} output channels", bias.len()));
    }
    ConvGeom::new(h, w, cin, cout, stride, padding)
}

pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f64], stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geom_for(input, kernels, bias, stride, padding)?;
    let mut out = vec![0.0; g.out_h * g.out_w * g.out_c];
    conv_forward_raw(&g, input.data(), kernels.data(), bias, &mut out);
    Ok(Tensor::from_parts(vec![g.out_h, g.out_w, g.out_c], out))
}

/// Gradients of a convolution: `(input, kernels, bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let g = conv_geom_for(input, kernels, bias, stride, padding)?;
    if grad_out.shape() != [g.out_h, g.out_w, g.out_c] {
        return Err(shape_err!("upstream gradient shape {:?}", grad_out.shape()));
    }
    let mut gk = vec![0.0; g.kernel_len()];
    let mut gb = vec![0.0; g.out_c];
    let gi = conv_backward_raw(&g, input.data(), kernels.data(), grad_out.data(), &mut gk, &mut gb, true)
        .expect("input gradient requested");
    Ok((
        Tensor::from_parts(input.shape().to_vec(), gi),
        Tensor::from_parts(kernels.shape().to_vec(), gk),
        gb,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

/// Routes `upstream` through entries where `x > 0`.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(shape_err!("relu gradient shape {:?} vs {:?}", upstream.shape(), x.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output,
/// the flat input index that won. Ties go to the first maximum in row-major
/// window order.
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = x.hwc()?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(shape_err!("max pooling needs even, non-zero extents, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_at = ((2 * oy) * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let at = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if data[at] > data[best_at] {
                        best_at = at;
                    }
                }
                out.push(data[best_at]);
                argmax.push(best_at);
            }
        }
    }
    Ok((Tensor::from_parts(vec![oh, ow, c], out), argmax))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if argmax.len() != upstream.len() {
        return Err(shape_err!("{} pooled positions, upstream has {}", argmax.len(), upstream.len()));
    }
    let mut grad = Tensor::zeros(input_shape.to_vec());
    let g = grad.data_mut();
    for (&at, &v) in argmax.iter().zip(upstream.data()) {
        g[at] += v;
    }
    Ok(grad)
}

/// Per-channel spatial mean of an HWC tensor.
pub fn gap(x: &Tensor) -> Result<Vec<f64>> {
    let (h, w, c) = x.hwc()?;
    if h == 0 || w == 0 {
        return Err(shape_err!("global average pooling of an empty map"));
    }
    let mut sums = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = (h * w) as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

pub fn gap_backward(input_shape: &[usize], upstream: &[f64]) -> Result<Tensor> {
    let (h, w, c) = match input_shape[..] {
        [h, w, c] => (h, w, c),
        _ => return Err(shape_err!("expected HWC shape, got {input_shape:?}")),
    };
    if upstream.len() != c {
        return Err(shape_err!("{} channel gradients for {c} channels", upstream.len()));
    }
    let n = (h * w) as f64;
    let px: Vec<f64> = upstream.iter().map(|g| g / n).collect();
    Ok(Tensor::from_parts(input_shape.to_vec(), px.repeat(h * w)))
}

/// `W x + b` with `W` stored row-major as `[out][in]`.
pub fn dense(x: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let out = bias.len();
    if weights.len() != out * x.len() {
        return Err(shape_err!(
            "dense weights have {} entries, need {}x{}",
            weights.len(),
            out,
            x.len()
        ));
    }
    if x.is_empty() {
        return Ok(bias.to_vec());
    }
    Ok(weights
        .chunks_exact(x.len())
        .zip(bias)
        .map(|(row, b)| dot(row, x) + b)
        .collect())
}

/// Gradients of a dense layer: `(x, W, b)`; the weight gradient is `outer(g, x)`.
pub fn dense_backward(x: &[f64], weights: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if weights.len() != upstream.len() * x.len() {
        return Err(shape_err!("dense backward dimensions"));
    }
    let mut gx = vec![0.0; x.len()];
    let mut gw = Vec::with_capacity(weights.len());
    for (row, &g) in weights.chunks_exact(x.len().max(1)).zip(upstream) {
        axpy(g, row, &mut gx);
        gw.extend(x.iter().map(|xi| g * xi));
    }
    Ok((gx, gw, upstream.to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

pub fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
    check_rate(rate)?;
    match mode {
        Mode::Infer => Ok(x.to_vec()),
        Mode::Train => {
            let mask = dropout_mask(x.len(), rate, rng)?;
            Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(config_err!("dropout rate {rate} outside [0, 1)"));
    }
    Ok(())
}

/// Mean squared error and its gradient `2 (pred - target) / n`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(shape_err!("mse of {} predictions vs {} targets", pred.len(), target.len()));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}
