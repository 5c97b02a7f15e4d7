//! Python bindings: `import boneage`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use boneage_core::annotation::{self, Cohort, Point};
use boneage_core::datagen::{self, SynthSpec};
use boneage_core::explain;
use boneage_core::imageops::{self, pgm};
use boneage_core::metrics::{self, GroupMetrics};
use boneage_core::nn::{self, checkpoint, ModelSpec};
use boneage_core::ridge::{self, RidgeOptions, RidgeProblem};

fn py_err(e: boneage_core::Error) -> PyErr {
    match e {
        boneage_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for boneage_core::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Grayscale image with values in `[0, 1]`, row-major.
#[pyclass(name = "GrayImage", frozen)]
struct PyGrayImage(imageops::GrayImage);

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        imageops::GrayImage::new(width, height, data).or_py().map(Self)
    }

    #[staticmethod]
    fn from_pgm(bytes: &[u8]) -> PyResult<Self> {
        pgm::decode(bytes).or_py().map(Self)
    }

    fn to_pgm(&self) -> Vec<u8> {
        pgm::encode(&self.0)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f64> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err(format!("({x}, {y}) is outside the image")));
        }
        Ok(self.0.get(x, y))
    }

    fn apply_mask(&self, mask: &PyMask, background: f64) -> PyResult<Self> {
        imageops::apply_mask(&self.0, &mask.0, background).or_py().map(Self)
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.0.width(), self.0.height())
    }
}

#[pyclass(name = "Mask", frozen)]
struct PyMask(imageops::Mask);

#[pymethods]
impl PyMask {
    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn bits(&self) -> Vec<bool> {
        self.0.bits().to_vec()
    }

    fn count(&self) -> usize {
        self.0.bits().iter().filter(|&&b| b).count()
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, {} set)", self.0.width(), self.0.height(), self.count())
    }
}

/// Even-odd fill of a polygon given as `[(x, y), ...]`, sampled at pixel centres.
#[pyfunction]
fn rasterize(polygon: Vec<(f64, f64)>, width: usize, height: usize) -> PyResult<PyMask> {
    let points: Vec<Point> = polygon.into_iter().map(|(x, y)| Point::new(x, y)).collect();
    imageops::rasterize(&points, width, height).or_py().map(PyMask)
}

/// `(id, file_name, width, height, cohort, target_age)`.
type ImageRow = (i64, String, u32, u32, &'static str, Option<f64>);

/// Annotated images: COCO polygons plus cohort and target age.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset(annotation::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_coco(text: &str) -> PyResult<Self> {
        annotation::parse_coco(text).or_py().map(Self)
    }

    #[staticmethod]
    fn from_via(text: &str) -> PyResult<Self> {
        annotation::parse_via(text).or_py().map(Self)
    }

    fn to_coco(&self) -> String {
        annotation::to_coco(&self.0)
    }

    fn to_sidecar(&self) -> String {
        annotation::to_sidecar(&self.0)
    }

    #[getter]
    fn images(&self) -> Vec<ImageRow> {
        self.0
            .images
            .iter()
            .map(|r| (r.id, r.file_name.clone(), r.width, r.height, r.cohort.as_str(), r.target_age))
            .collect()
    }

    /// Polygons annotated on one image.
    fn polygons(&self, image_id: i64) -> Vec<Vec<(f64, f64)>> {
        self.0
            .annotations_for(image_id)
            .map(|a| a.polygon.iter().map(|p| (p.x, p.y)).collect())
            .collect()
    }

    /// Union of all polygons on one image.
    fn mask(&self, image_id: i64) -> PyResult<PyMask> {
        let rec = self
            .0
            .image(image_id)
            .ok_or_else(|| PyValueError::new_err(format!("no image with id {image_id}")))?;
        imageops::union_mask(self.0.annotations_for(image_id), rec.width as usize, rec.height as usize)
            .or_py()
            .map(PyMask)
    }

    fn __len__(&self) -> usize {
        self.0.images.len()
    }
}

/// Synthetic radiographs whose age is `a * blobs + b` months.
#[pyfunction]
#[pyo3(signature = (count, image_size, blob_count_range, age_rule, noise_sd, seed, blob_radius=None))]
fn generate(
    count: usize,
    image_size: usize,
    blob_count_range: (usize, usize),
    age_rule: (f64, f64),
    noise_sd: f64,
    seed: u64,
    blob_radius: Option<f64>,
) -> PyResult<(PyDataset, Vec<PyGrayImage>, Vec<usize>)> {
    let spec = SynthSpec {
        count,
        image_size,
        blob_count_range,
        age_rule,
        noise_sd,
        seed,
        blob_radius,
    };
    let synth = datagen::generate(&spec).or_py()?;
    let images = synth.images.into_iter().map(PyGrayImage).collect();
    Ok((PyDataset(synth.dataset), images, synth.blob_counts))
}

/// Closed-form ridge fit without intercept; returns `(beta, objective)`.
#[pyfunction]
fn ridge_fit(rows: Vec<Vec<f64>>, y: Vec<f64>, lam: f64) -> PyResult<(Vec<f64>, f64)> {
    let sol = ridge::fit_closed_form(&RidgeProblem::new(&rows, &y, lam).or_py()?).or_py()?;
    Ok((sol.beta, sol.objective))
}

/// K-fold search over `grid`; returns `(best_lambda, [(lambda, mean_mse), ...])`.
#[pyfunction]
#[pyo3(signature = (rows, y, grid, folds=5, seed=0, intercept=true, standardize=false))]
fn ridge_cv(
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    grid: Vec<f64>,
    folds: usize,
    seed: u64,
    intercept: bool,
    standardize: bool,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let cv = ridge::cross_validate_lambda(&rows, &y, &grid, folds, seed, RidgeOptions { intercept, standardize }).or_py()?;
    Ok((cv.best_lambda, cv.scores))
}

fn group_dict<'py>(py: Python<'py>, g: &GroupMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n", g.n)?;
    d.set_item("mae", g.mae)?;
    d.set_item("rmse", g.rmse)?;
    d.set_item("rmspe", g.rmspe)?;
    d.set_item("rmspe_percent", g.rmspe_percent)?;
    Ok(d)
}

/// MAE, RMSE and RMSPE overall and per cohort (`"male"`, `"female"`, `"unknown"`).
#[pyfunction]
#[pyo3(signature = (y, yhat, cohorts=None))]
fn compute_metrics<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    yhat: Vec<f64>,
    cohorts: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cohorts: Vec<Cohort> = match cohorts {
        Some(names) => names.iter().map(|s| s.parse()).collect::<boneage_core::Result<_>>().or_py()?,
        None => vec![Cohort::Unknown; y.len()],
    };
    let report = metrics::compute(&y, &yhat, &cohorts).or_py()?;
    let out = group_dict(py, &report.overall)?;
    let per = PyDict::new(py);
    for (c, g) in &report.per_cohort {
        per.set_item(c.as_str(), group_dict(py, g)?)?;
    }
    out.set_item("per_cohort", per)?;
    Ok(out)
}

/// Regression network with a ridge-penalised linear head.
#[pyclass(name = "Model", frozen)]
struct PyModel(nn::Model);

#[pymethods]
impl PyModel {
    /// Freshly initialised network; `spec_json` defaults to the desk profile.
    #[new]
    #[pyo3(signature = (seed, spec_json=None))]
    fn new(seed: u64, spec_json: Option<&str>) -> PyResult<Self> {
        let spec = match spec_json {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ModelSpec::desk(),
        };
        nn::Model::new(spec, seed).or_py().map(Self)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        checkpoint::read(path).or_py().map(Self)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        checkpoint::decode(bytes).or_py().map(Self)
    }

    fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.0)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    #[getter]
    fn spec_json(&self) -> String {
        checkpoint::canonical_json(self.0.spec())
    }

    /// Predicted age in months; the image must match the input size.
    fn predict(&self, image: &PyGrayImage) -> PyResult<f64> {
        nn::predict(&self.0, &image.0).or_py()
    }

    /// `(width, height, values)` of the Grad-CAM map; `layer` defaults to the last convolution.
    #[pyo3(signature = (image, layer=None, samples=1, noise_sd=0.0, seed=0))]
    fn grad_cam(
        &self,
        image: &PyGrayImage,
        layer: Option<usize>,
        samples: usize,
        noise_sd: f64,
        seed: u64,
    ) -> PyResult<(usize, usize, Vec<f64>)> {
        let layer = layer.unwrap_or_else(|| explain::default_layer(&self.0));
        let map = if samples == 1 && noise_sd == 0.0 {
            explain::grad_cam(&self.0, &image.0, layer)
        } else {
            explain::smooth(&self.0, &image.0, layer, samples, noise_sd, seed)
        }
        .or_py()?;
        Ok((map.width, map.height, map.values))
    }
}

#[pymodule]
fn boneage(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_fit, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_cv, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    Ok(())
}
