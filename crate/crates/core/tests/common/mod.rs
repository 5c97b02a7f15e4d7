#![allow(dead_code)]

pub mod grad;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Relative error with a floor on the denominator so that tiny gradients are
/// compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative error between `analytic` and central differences of `f` at `x`.
pub fn max_fd_error(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Random design matrix with `n >= 2p` rows, entries in `[-1, 1)`, and a
/// noisy linear response.
pub fn random_problem(r: &mut ChaCha8Rng, p_max: usize, n_max: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = r.random_range(1..=p_max);
    let n = r.random_range((2 * p).max(8)..=n_max);
    let beta = uniform(r, p, -3.0, 3.0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform(r, p, -1.0, 1.0)).collect();
    let y = rows
        .iter()
        .map(|row| row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + r.random_range(-0.5..0.5))
        .collect();
    (rows, y)
}

/// Plain gradient descent on `||y - X b||^2 + lambda ||b||^2` with step
/// `1 / L`, `L` bounding the Hessian's largest eigenvalue by its trace.
pub fn ridge_by_gradient_descent(rows: &[Vec<f64>], y: &[f64], lambda: f64, iterations: usize) -> Vec<f64> {
    let p = rows[0].len();
    let mut gram = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for (row, &t) in rows.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * t;
            for j in 0..p {
                gram[i * p + j] += row[i] * row[j];
            }
        }
    }
    let trace: f64 = (0..p).map(|i| gram[i * p + i]).sum();
    let step = 1.0 / (2.0 * (trace + lambda));
    let mut beta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    for _ in 0..iterations {
        for i in 0..p {
            let gb: f64 = (0..p).map(|j| gram[i * p + j] * beta[j]).sum();
            grad[i] = 2.0 * (gb - xty[i] + lambda * beta[i]);
        }
        for i in 0..p {
            beta[i] -= step * grad[i];
        }
    }
    beta
}

/// Least squares through a Householder QR of `X` (no normal equations).
pub fn least_squares_qr(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let (n, p) = (rows.len(), rows[0].len());
    let x = nalgebra::DMatrix::from_row_slice(n, p, &rows.concat());
    let qr = x.qr();
    let qty = qr.q().transpose() * nalgebra::DVector::from_column_slice(y);
    let beta = qr.r().solve_upper_triangular(&qty).expect("full column rank");
    beta.iter().copied().collect()
}

pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Even-odd test of a single point, the classic crossing-number loop.
pub fn point_in_polygon(poly: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.1 > py) != (b.1 > py) {
            let x = (b.0 - a.0) * (py - a.1) / (b.1 - a.1) + a.0;
            if px < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Per-pixel oracle: pixel `(i, j)` is set when its centre is inside.
pub fn oracle_mask(poly: &[(f64, f64)], w: usize, h: usize) -> Vec<bool> {
    let mut bits = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            bits.push(point_in_polygon(poly, i as f64 + 0.5, j as f64 + 0.5));
        }
    }
    bits
}

/// 4-connected components of `bits` (row-major `w x h`) by flood fill.
pub fn count_components(bits: &[bool], w: usize, h: usize) -> usize {
    let mut seen = vec![false; bits.len()];
    let mut count = 0;
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(k) = stack.pop() {
            let (x, y) = (k % w, k / w);
            let mut visit = |nx: usize, ny: usize| {
                let nk = ny * w + nx;
                if bits[nk] && !seen[nk] {
                    seen[nk] = true;
                    stack.push(nk);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
    }
    count
}

pub mod constructed {
    use boneage_core::imageops::GrayImage;
    use boneage_core::nn::{Activation, ConvBlock, Head, InputShape, Model, ModelSpec, TargetScaling};

    pub const SIZE: usize = 16;

    fn set(model: &mut Model, name: &str, values: &[f64]) {
        let block = model.layout().iter().find(|b| b.name == name).unwrap().clone();
        assert_eq!(block.len, values.len(), "{name}");
        model.params_mut()[block.offset..block.offset + block.len].copy_from_slice(values);
    }

    /// One conv layer with two 3x3 filters feeding GAP and an identity dense
    /// layer. Channel 0 responds to bright pixels (`relu(x - 0.5)`), channel 1
    /// to dark ones (`relu(0.5 - x)`). The prediction is the pooled mean of
    /// channel 0 times `gain`; channel 1 never reaches the output.
    pub fn detector_model(gain: f64) -> Model {
        let spec = ModelSpec {
            input: InputShape { height: SIZE, width: SIZE, channels: 1 },
            blocks: vec![ConvBlock::new(2, 1)],
            dense_width: 2,
            dense_activation: Activation::Identity,
            dropout_rate: 0.0,
            head: Head::PlainLinear,
            target: TargetScaling::default(),
        };
        let mut model = Model::zeros(spec).unwrap();
        let mut kernels = [0.0; 18];
        kernels[4] = 1.0;
        kernels[9 + 4] = -1.0;
        set(&mut model, "conv0_0.kernel", &kernels);
        set(&mut model, "conv0_0.bias", &[-0.5, 0.5]);
        set(&mut model, "dense.weight", &[1.0, 0.0, 0.0, 1.0]);
        set(&mut model, "head.weight", &[gain, 0.0]);
        model
    }

    /// Bright top-left quadrant on a dark field.
    pub fn quadrant_image() -> GrayImage {
        GrayImage::from_fn(SIZE, SIZE, |x, y| if x < SIZE / 2 && y < SIZE / 2 { 0.9 } else { 0.1 })
    }
}

/// Compares `bytes` with a golden file under `tests/fixtures/golden`.
/// `BLESS_GOLDEN=1` rewrites the file instead.
pub fn check_golden(name: &str, bytes: &[u8]) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name);
    if std::env::var_os("BLESS_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, bytes).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if expected != bytes {
        panic!(
            "{name} differs from golden\n--- golden\n{}\n--- actual\n{}",
            String::from_utf8_lossy(&expected),
            String::from_utf8_lossy(bytes)
        );
    }
}
