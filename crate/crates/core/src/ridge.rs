//! Ridge regression.
//!
//! For a design matrix `X` (n x p, rows are samples), response `y` and penalty
//! `lambda >= 0`, the ridge coefficients minimise
//! `||y - X b||^2 + lambda ||b||^2` and solve the normal equations
//! `(X^T X + lambda I) b = X^T y`. The solver factors the system matrix with a
//! Cholesky decomposition and applies iterative refinement until the
//! normal-equation residual bound holds.
//!
//! [`fit_linear`] adds the conventional unpenalised intercept (by centering)
//! and optional column standardisation; this is what the two-stage head and
//! the `cv-lambda` command use. Standardisation changes which coefficients
//! the penalty shrinks hardest, so it is off unless requested.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProblem {
    n: usize,
    p: usize,
    /// Row-major `n x p`.
    x: Vec<f64>,
    y: Vec<f64>,
    lambda: f64,
}

impl RidgeProblem {
    pub fn new(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if n == 0 || p == 0 {
            return Err(shape_err!("ridge needs n >= 1 and p >= 1, got {n}x{p}"));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(shape_err!("ragged design matrix"));
        }
        Self::from_flat(rows.concat(), n, p, y.to_vec(), lambda)
    }

    pub fn from_flat(x: Vec<f64>, n: usize, p: usize, y: Vec<f64>, lambda: f64) -> Result<Self> {
        if n == 0 || p == 0 || x.len() != n * p {
            return Err(shape_err!("{} design values for {n}x{p}", x.len()));
        }
        if y.len() != n {
            return Err(shape_err!("{} responses for {n} rows", y.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("ridge problem contains a non-finite value".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(config_err!("lambda must be finite and non-negative, got {lambda}"));
        }
        Ok(RidgeProblem { n, p, x, y, lambda })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::from_flat(self.x.clone(), self.n, self.p, self.y.clone(), lambda)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// `X^T X + lambda I` (row-major p x p) and `X^T y`.
    fn normal_equations(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        for i in 0..self.n {
            let r = self.row(i);
            for j in 0..p {
                b[j] += r[j] * self.y[i];
                for k in j..p {
                    a[j * p + k] += r[j] * r[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                a[j * p + k] = a[k * p + j];
            }
            a[j * p + j] += self.lambda;
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Objective value at `beta`.
    pub objective: f64,
}

/// `||y - X beta||^2 + lambda ||beta||^2`.
pub fn objective(problem: &RidgeProblem, beta: &[f64]) -> Result<f64> {
    if beta.len() != problem.p {
        return Err(shape_err!("{} coefficients for p = {}", beta.len(), problem.p));
    }
    let rss: f64 = (0..problem.n)
        .map(|i| {
            let fit: f64 = problem.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            (problem.y[i] - fit).powi(2)
        })
        .sum();
    Ok(rss + problem.lambda * beta.iter().map(|b| b * b).sum::<f64>())
}

/// Gradient of the penalty term: `2 lambda beta`.
pub fn penalty_gradient(beta: &[f64], lambda: f64) -> Vec<f64> {
    beta.iter().map(|b| 2.0 * lambda * b).collect()
}

/// Closed-form ridge solution.
pub fn fit_closed_form(problem: &RidgeProblem) -> Result<RidgeSolution> {
    let p = problem.p;
    let (a, b) = problem.normal_equations();
    let chol = Cholesky::factor(&a, p)?;
    let mut beta = chol.solve(&b);
    let b_norm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = 1e-8 * (1.0 + b_norm);
    let mut residual = normal_residual(&a, &b, &beta, p);
    for _ in 0..3 {
        let norm = inf_norm(&residual);
        if norm == 0.0 {
            break;
        }
        let correction = chol.solve(&residual);
        let refined: Vec<f64> = beta.iter().zip(&correction).map(|(x, c)| x + c).collect();
        let next = normal_residual(&a, &b, &refined, p);
        if inf_norm(&next) > norm {
            break;
        }
        beta = refined;
        residual = next;
    }
    if inf_norm(&residual) >= bound {
        return Err(Error::Singular);
    }
    let objective = objective(problem, &beta)?;
    Ok(RidgeSolution {
        beta,
        lambda: problem.lambda,
        objective,
    })
}

/// `b - A x`
fn normal_residual(a: &[f64], b: &[f64], x: &[f64], p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| b[j] - a[j * p..(j + 1) * p].iter().zip(x).map(|(u, v)| u * v).sum::<f64>())
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Cholesky {
    p: usize,
    /// Lower triangle, row-major.
    l: Vec<f64>,
}

impl Cholesky {
    fn factor(a: &[f64], p: usize) -> Result<Self> {
        let scale = (0..p).fold(0.0f64, |m, j| m.max(a[j * p + j].abs())).max(f64::MIN_POSITIVE);
        let tol = scale * p as f64 * f64::EPSILON * 16.0;
        let mut l = vec![0.0; p * p];
        for j in 0..p {
            let mut d = a[j * p + j];
            for k in 0..j {
                d -= l[j * p + k] * l[j * p + k];
            }
            if !(d > tol) {
                return Err(Error::Singular);
            }
            let d = d.sqrt();
            l[j * p + j] = d;
            for i in j + 1..p {
                let mut s = a[i * p + j];
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k];
                }
                l[i * p + j] = s / d;
            }
        }
        Ok(Cholesky { p, l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (p, l) = (self.p, &self.l);
        let mut z = vec![0.0; p];
        for i in 0..p {
            let s: f64 = (0..i).map(|k| l[i * p + k] * z[k]).sum();
            z[i] = (b[i] - s) / l[i * p + i];
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|k| l[k * p + i] * x[k]).sum();
            x[i] = (z[i] - s) / l[i * p + i];
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RidgeOptions {
    /// Fit an unpenalised intercept by centering `X` and `y`.
    #[serde(default)]
    pub intercept: bool,
    /// Scale columns to unit variance before fitting.
    #[serde(default)]
    pub standardize: bool,
}

/// Coefficients in the original feature units plus intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl LinearFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Ridge fit with optional intercept and standardisation; with both off this
/// is exactly [`fit_closed_form`].
pub fn fit_linear(problem: &RidgeProblem, options: RidgeOptions) -> Result<LinearFit> {
    let (n, p) = (problem.n, problem.p);
    let mut means = vec![0.0; p];
    let mut y_mean = 0.0;
    if options.intercept {
        for i in 0..n {
            for (m, v) in means.iter_mut().zip(problem.row(i)) {
                *m += v / n as f64;
            }
        }
        y_mean = problem.y.iter().sum::<f64>() / n as f64;
    }
    let mut scales = vec![1.0; p];
    if options.standardize {
        for (j, s) in scales.iter_mut().enumerate() {
            let var = (0..n).map(|i| (problem.row(i)[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                *s = var.sqrt();
            }
        }
    }
    let x: Vec<f64> = (0..n)
        .flat_map(|i| {
            let (means, scales) = (&means, &scales);
            problem.row(i).iter().enumerate().map(move |(j, v)| (v - means[j]) / scales[j])
        })
        .collect();
    let y: Vec<f64> = problem.y.iter().map(|v| v - y_mean).collect();
    let solution = fit_closed_form(&RidgeProblem::from_flat(x, n, p, y, problem.lambda)?)?;
    let coefficients: Vec<f64> = solution.beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearFit {
        coefficients,
        intercept,
        lambda: problem.lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    /// `(lambda, mean validation MSE)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// K-fold cross-validation over a penalty grid.
///
/// Rows are shuffled with the seed and split into `folds` contiguous parts.
/// The score for a penalty is the mean over folds of the held-out MSE; the
/// lowest score wins and exact ties go to the larger penalty.
pub fn cross_validate_lambda(
    rows: &[Vec<f64>],
    y: &[f64],
    grid: &[f64],
    folds: usize,
    seed: u64,
    options: RidgeOptions,
) -> Result<CvResult> {
    let full = RidgeProblem::new(rows, y, 0.0)?;
    if grid.is_empty() {
        return Err(config_err!("lambda grid is empty"));
    }
    if folds < 2 {
        return Err(config_err!("cross-validation needs at least 2 folds"));
    }
    if full.n < folds {
        return Err(config_err!("{} samples cannot fill {folds} folds", full.n));
    }
    let mut order: Vec<usize> = (0..full.n).collect();
    order.shuffle(&mut rng::from_seed(seed));
    let bounds: Vec<(usize, usize)> = (0..folds)
        .map(|f| (f * full.n / folds, (f + 1) * full.n / folds))
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let fold_mse = bounds
            .par_iter()
            .map(|&(lo, hi)| {
                let held = &order[lo..hi];
                let kept: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
                let train_rows: Vec<f64> = kept.iter().flat_map(|&i| full.row(i).to_vec()).collect();
                let train_y: Vec<f64> = kept.iter().map(|&i| full.y[i]).collect();
                let train = RidgeProblem::from_flat(train_rows, kept.len(), full.p, train_y, lambda)?;
                let fit = fit_linear(&train, options)?;
                let sse: f64 = held.iter().map(|&i| (full.y[i] - fit.predict(full.row(i))).powi(2)).sum();
                Ok(sse / held.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        scores.push((lambda, fold_mse.iter().sum::<f64>() / folds as f64));
    }
    let mut best = scores[0];
    for &(lambda, mse) in &scores[1..] {
        if mse < best.1 || (mse == best.1 && lambda > best.0) {
            best = (lambda, mse);
        }
    }
    Ok(CvResult {
        best_lambda: best.0,
        scores,
    })
}

/// Feature matrix CSV with header `f0,...,f{p-1},target`.
pub fn features_to_csv(rows: &[Vec<f64>], y: &[f64]) -> Result<String> {
    if rows.len() != y.len() {
        return Err(shape_err!("{} rows, {} targets", rows.len(), y.len()));
    }
    let p = rows.first().map_or(0, Vec::len);
    let mut out = (0..p).map(|j| format!("f{j}")).chain(["target".to_string()]).collect::<Vec<_>>().join(",");
    out.push('\n');
    for (row, t) in rows.iter().zip(y) {
        if row.len() != p {
            return Err(shape_err!("ragged feature matrix"));
        }
        let line: Vec<String> = row.iter().chain([t]).map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn features_from_csv(text: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { offset: 0, message: e.to_string() })?
        .clone();
    if header.iter().next_back() != Some("target") {
        return Err(Error::Parse {
            offset: 0,
            message: "last column must be `target`".into(),
        });
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            offset: e.position().map_or(0, |p| p.byte() as usize),
            message: e.to_string(),
        })?;
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                offset: record.position().map_or(0, |p| p.byte() as usize),
                message: e.to_string(),
            })?;
        let (t, feats) = values.split_last().expect("header has a target column");
        rows.push(feats.to_vec());
        y.push(*t);
    }
    Ok((rows, y))
}
