//! The `boneage` command line.
//!
//! ```text
//! boneage <gen-data|segment|train|cv-lambda|evaluate|explain> --config run.json [--workers N]
//! ```
//!
//! The config is a JSON [`RunConfig`]; relative paths resolve against the
//! config file's directory. One top-level `seed` drives every random choice,
//! so a config reproduces its artifacts byte for byte at any worker count.
//! Exit codes: 0 success, 1 domain error (one line on stderr), 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::via::DEFAULT_CATEGORY;
use crate::annotation::{apply_sidecar, parse_coco, parse_sidecar, parse_via_with, Dataset};
use crate::datagen::{generate, SynthSpec};
use crate::error::{config_err, Error, Result};
use crate::explain::{default_layer, export_heatmap, grad_cam, smooth};
use crate::imageops::{apply_mask, pgm, resize, union_mask, GrayImage, ResizeMode, BACKGROUND};
use crate::metrics;
use crate::nn::{checkpoint, extract_features, fit_ridge_head, predict_all, train, Model, ModelSpec, Sample, TrainConfig};
use crate::ridge::{cross_validate_lambda, features_to_csv, RidgeOptions};
use crate::rng;
use crate::store::{self, Staging};

const SPLIT_STREAM: u64 = 3 << 40;

#[derive(Debug, Parser)]
#[command(name = "boneage", version, about = "Bone-age regression pipeline: segmentation, training, evaluation, explanation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory
    GenData(CommonArgs),
    /// Rasterize hand annotations and remove the background
    Segment(CommonArgs),
    /// Train the network and write a checkpoint
    Train(CommonArgs),
    /// Cross-validate the ridge penalty on frozen features
    CvLambda(CommonArgs),
    /// Compute metrics for a checkpoint
    Evaluate(CommonArgs),
    /// Write Grad-CAM heatmaps
    Explain(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; results do not depend on this
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeMode {
    /// Penalty on the head weights inside the training loss.
    #[default]
    EndToEnd,
    /// Closed-form ridge head refit on frozen dense features after training.
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory written by `gen-data` and read by `segment`.
    #[serde(default = "Paths::default_dataset")]
    pub dataset: PathBuf,
    /// Output of `segment`.
    #[serde(default = "Paths::default_segmented")]
    pub segmented: PathBuf,
    /// Dataset used for training, evaluation and explanation; defaults to `dataset`.
    #[serde(default)]
    pub training: Option<PathBuf>,
    /// COCO or VIA file overriding `<dataset>/annotations.json` for `segment`.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default = "Paths::default_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default = "Paths::default_reports")]
    pub reports: PathBuf,
}

impl Paths {
    fn default_dataset() -> PathBuf {
        "data".into()
    }
    fn default_segmented() -> PathBuf {
        "segmented".into()
    }
    fn default_checkpoint() -> PathBuf {
        "model.ckpt".into()
    }
    fn default_reports() -> PathBuf {
        "reports".into()
    }

    fn training(&self) -> &Path {
        self.training.as_deref().unwrap_or(&self.dataset)
    }
}

impl Default for Paths {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all path fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeSection {
    #[serde(default)]
    pub mode: RidgeMode,
    /// Penalties tried by `cv-lambda` and by a two-stage `train`.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "RidgeSection::default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub standardize: bool,
}

impl RidgeSection {
    fn default_folds() -> usize {
        5
    }
}

impl Default for RidgeSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all ridge fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Val,
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Held-out images; defaults to a fifth of the dataset.
    #[serde(default)]
    pub val_count: Option<usize>,
    /// Subset scored by `evaluate`.
    #[serde(default)]
    pub evaluate: EvalSplit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    #[serde(default)]
    pub background: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    /// Convolution index counted from 0; defaults to the last one.
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default = "ExplainSection::default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub noise_sd: f64,
    /// Image file names; defaults to the first `count` validation images.
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default = "ExplainSection::default_count")]
    pub count: usize,
}

impl ExplainSection {
    fn default_samples() -> usize {
        1
    }
    fn default_count() -> usize {
        4
    }
}

impl Default for ExplainSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all explain fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    /// Required by `gen-data`.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default = "ModelSpec::desk")]
    pub model: ModelSpec,
    /// Required by `train`.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub ridge: RidgeSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub segment: SegmentSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

impl RunConfig {
    /// Parses a config, injecting the top-level seed into the `synth` and
    /// `train` sections (which must not carry their own).
    pub fn parse(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| crate::annotation::json_error(text, &e))?;
        let seed = value.get("seed").cloned().ok_or_else(|| config_err!("missing top-level seed"))?;
        for section in ["synth", "train"] {
            if let Some(obj) = value.get_mut(section).and_then(Value::as_object_mut) {
                if obj.contains_key("seed") {
                    return Err(config_err!("{section}.seed is not allowed; use the top-level seed"));
                }
                obj.insert("seed".into(), seed.clone());
            }
        }
        serde_json::from_value(value).map_err(|e| config_err!("{e}"))
    }

    /// Canonical JSON (sorted keys, LF), as stored beside artifacts.
    pub fn to_canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for section in ["synth", "train"] {
            if let Some(obj) = value.get_mut(section).and_then(Value::as_object_mut) {
                obj.remove("seed");
            }
        }
        let mut s = serde_json::to_string_pretty(&value).expect("JSON values serialize");
        s.push('\n');
        s
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.dataset, &mut p.segmented, &mut p.checkpoint, &mut p.reports] {
            *path = base.join(&*path);
        }
        for path in [&mut p.training, &mut p.annotations].into_iter().flatten() {
            *path = base.join(&*path);
        }
    }
}

/// Parses `argv` (including the program name), runs the command, prints any
/// diagnostic, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs a parsed command and returns its stdout summary.
pub fn execute(cli: &Cli) -> Result<String> {
    let (Command::GenData(args)
    | Command::Segment(args)
    | Command::Train(args)
    | Command::CvLambda(args)
    | Command::Evaluate(args)
    | Command::Explain(args)) = &cli.command;
    let mut config = RunConfig::parse(&store::read_text(&args.config)?)?;
    config.resolve(args.config.parent().unwrap_or(Path::new("")));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.into())
        .build()
        .map_err(|e| config_err!("cannot start {} workers: {e}", args.workers))?;
    pool.install(|| match cli.command {
        Command::GenData(_) => gen_data(&config),
        Command::Segment(_) => segment(&config),
        Command::Train(_) => train_cmd(&config),
        Command::CvLambda(_) => cv_lambda(&config),
        Command::Evaluate(_) => evaluate(&config),
        Command::Explain(_) => explain(&config),
    })
}

fn gen_data(config: &RunConfig) -> Result<String> {
    let spec = config.synth.as_ref().ok_or_else(|| config_err!("gen-data needs a synth section"))?;
    let synth = generate(spec)?;
    let mut staging = Staging::new();
    store::stage_dataset(&mut staging, &config.paths.dataset, &synth.dataset, &synth.images, vec![]);
    staging.commit()?;
    Ok(format!("wrote {} images to {}\n", synth.images.len(), config.paths.dataset.display()))
}

/// Reads a COCO or VIA file; VIA images take their size from the PGM headers.
fn load_annotations(path: &Path, image_dir: &Path) -> Result<Dataset> {
    let text = store::read_text(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| crate::annotation::json_error(&text, &e))?;
    if value.get("images").is_some() {
        return parse_coco(&text);
    }
    parse_via_with(&text, |name| {
        let bytes = std::fs::read(image_dir.join(name)).ok()?;
        let (w, h) = pgm::dimensions(&bytes).ok()?;
        Some((u32::try_from(w).ok()?, u32::try_from(h).ok()?))
    })
}

fn segment(config: &RunConfig) -> Result<String> {
    let paths = &config.paths;
    if paths.segmented == paths.dataset {
        return Err(config_err!("segment would overwrite its input; set paths.segmented"));
    }
    let background = config.segment.background.unwrap_or(BACKGROUND);
    if !(0.0..=1.0).contains(&background) {
        return Err(config_err!("background {background} outside [0, 1]"));
    }
    let mut dataset = match &paths.annotations {
        Some(file) => load_annotations(file, &paths.dataset.join(store::IMAGES))?,
        None => parse_coco(&store::read_text(&paths.dataset.join(store::ANNOTATIONS))?)?,
    };
    let labels = paths.dataset.join(store::LABELS);
    if labels.exists() {
        apply_sidecar(&mut dataset, &parse_sidecar(&store::read_text(&labels)?)?)?;
    }
    let images = store::load_images(&paths.dataset, &dataset)?;
    let mut segmented = Vec::with_capacity(images.len());
    let mut masks = Vec::with_capacity(images.len());
    let hand = dataset.category_id(DEFAULT_CATEGORY);
    for (rec, img) in dataset.images.iter().zip(&images) {
        let regions = dataset
            .annotations_for(rec.id)
            .filter(|a| hand.is_none_or(|id| a.category_id == id));
        let mask = union_mask(regions, img.width(), img.height())?;
        segmented.push(apply_mask(img, &mask, background)?);
        masks.push((Path::new("masks").join(&rec.file_name), pgm::encode_mask(&mask)));
    }
    let mut staging = Staging::new();
    store::stage_dataset(&mut staging, &paths.segmented, &dataset, &segmented, masks);
    staging.commit()?;
    Ok(format!("segmented {} images into {}\n", segmented.len(), paths.segmented.display()))
}

/// Training data with the deterministic train/validation split.
struct Split {
    dataset: Dataset,
    train: Vec<usize>,
    val: Vec<usize>,
    samples: Vec<Sample>,
}

impl Split {
    fn pick(&self, which: &[usize]) -> Vec<Sample> {
        which.iter().map(|&i| self.samples[i].clone()).collect()
    }

    fn indices(&self, which: EvalSplit) -> Vec<usize> {
        match which {
            EvalSplit::Val => self.val.clone(),
            EvalSplit::Train => self.train.clone(),
            EvalSplit::All => (0..self.samples.len()).collect(),
        }
    }
}

/// Seeded `(train, validation)` index sets, each sorted.
pub fn split_indices(seed: u64, n: usize, val_count: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derive(seed, SPLIT_STREAM, 0));
    let mut val = order[..val_count.min(n)].to_vec();
    let mut train = order[val_count.min(n)..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn load_split(config: &RunConfig, spec: &ModelSpec) -> Result<Split> {
    let (dataset, images) = store::load_dataset(config.paths.training())?;
    let n = images.len();
    let val_count = config.split.val_count.unwrap_or(n / 5);
    if val_count >= n {
        return Err(config_err!("val_count {val_count} leaves no training images out of {n}"));
    }
    let (w, h) = (spec.input.width, spec.input.height);
    let samples = dataset
        .images
        .iter()
        .zip(images)
        .map(|(rec, img)| {
            let target = rec
                .target_age
                .ok_or_else(|| Error::Invalid(format!("{} has no target age", rec.file_name)))?;
            let image = resize(&img, w, h, ResizeMode::Bilinear)?;
            Ok(Sample { image, target })
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, val) = split_indices(config.seed, n, val_count);
    Ok(Split {
        dataset,
        train,
        val,
        samples,
    })
}

fn head_options(config: &RunConfig) -> RidgeOptions {
    RidgeOptions {
        intercept: true,
        standardize: config.ridge.standardize,
    }
}

fn features(model: &Model, samples: &[Sample]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    let rows = extract_features(model, &images)?;
    Ok((rows, samples.iter().map(|s| s.target).collect()))
}

fn train_cmd(config: &RunConfig) -> Result<String> {
    let train_cfg = config.train.as_ref().ok_or_else(|| config_err!("train needs a train section"))?;
    let split = load_split(config, &config.model)?;
    let train_set = split.pick(&split.train);
    let val_set = split.pick(&split.val);
    let model = Model::new(config.model.clone(), config.seed)?;
    let (mut model, history) = train(model, &train_set, &val_set, train_cfg)?;

    let mut staging = Staging::new();
    let reports = &config.paths.reports;
    let mut summary = String::new();
    if config.ridge.mode == RidgeMode::TwoStage {
        let lambda = if config.ridge.lambda_grid.is_empty() {
            train_cfg.lambda
        } else {
            let (rows, y) = features(&model, &train_set)?;
            let cv = cross_validate_lambda(&rows, &y, &config.ridge.lambda_grid, config.ridge.folds, config.seed, head_options(config))?;
            staging.file(reports.join("head_cv.csv"), cv_csv(&cv.scores));
            cv.best_lambda
        };
        fit_ridge_head(&mut model, &train_set, lambda, config.ridge.standardize)?;
        let _ = writeln!(summary, "two-stage head refit with lambda {lambda}");
    }
    let (val_mse, val_mae) = if val_set.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        crate::nn::evaluate(&model, &val_set)?
    };
    staging.file(&config.paths.checkpoint, checkpoint::encode(&model));
    staging.file(reports.join("history.csv"), history.to_csv());
    staging.file(reports.join("run_config.json"), config.to_canonical_json());
    staging.commit()?;
    let _ = writeln!(
        summary,
        "trained {} epochs on {} images; validation MAE {val_mae:.3}, MSE {val_mse:.3}",
        history.epochs.len(),
        train_set.len()
    );
    Ok(summary)
}

fn cv_csv(scores: &[(f64, f64)]) -> String {
    let mut out = String::from("lambda,mean_mse\n");
    for (l, s) in scores {
        let _ = writeln!(out, "{l},{s}");
    }
    out
}

fn load_model(config: &RunConfig) -> Result<Model> {
    checkpoint::read(&config.paths.checkpoint)
}

fn cv_lambda(config: &RunConfig) -> Result<String> {
    if config.ridge.lambda_grid.is_empty() {
        return Err(config_err!("cv-lambda needs ridge.lambda_grid"));
    }
    let model = load_model(config)?;
    let split = load_split(config, model.spec())?;
    let (rows, y) = features(&model, &split.pick(&split.train))?;
    let cv = cross_validate_lambda(&rows, &y, &config.ridge.lambda_grid, config.ridge.folds, config.seed, head_options(config))?;
    let reports = &config.paths.reports;
    let mut staging = Staging::new();
    staging.file(reports.join("cv_lambda.csv"), cv_csv(&cv.scores));
    staging.file(reports.join("features.csv"), features_to_csv(&rows, &y)?);
    staging.commit()?;
    Ok(format!("best lambda {} over {} folds\n", cv.best_lambda, config.ridge.folds))
}

fn evaluate(config: &RunConfig) -> Result<String> {
    let model = load_model(config)?;
    let split = load_split(config, model.spec())?;
    let which = split.indices(config.split.evaluate);
    if which.is_empty() {
        return Err(config_err!("the {:?} split is empty", config.split.evaluate));
    }
    let samples = split.pick(&which);
    let predictions = predict_all(&model, &samples)?;
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let cohorts: Vec<_> = which.iter().map(|&i| split.dataset.images[i].cohort).collect();
    let report = metrics::compute(&targets, &predictions, &cohorts)?;
    let reports = &config.paths.reports;
    let mut staging = Staging::new();
    staging.file(reports.join("metrics.json"), report.to_json());
    staging.file(reports.join("metrics.txt"), report.to_text());
    staging.file(reports.join("scatter.csv"), metrics::scatter_export(&targets, &predictions, &cohorts)?);
    staging.commit()?;
    Ok(report.to_text())
}

fn explain(config: &RunConfig) -> Result<String> {
    let model = load_model(config)?;
    let split = load_split(config, model.spec())?;
    let section = &config.explain;
    let layer = section.layer.unwrap_or_else(|| default_layer(&model));
    let chosen: Vec<usize> = if section.images.is_empty() {
        split.val.iter().chain(&split.train).copied().take(section.count).collect()
    } else {
        section
            .images
            .iter()
            .map(|name| {
                split
                    .dataset
                    .images
                    .iter()
                    .position(|r| &r.file_name == name)
                    .ok_or_else(|| config_err!("explain image {name:?} is not in the dataset"))
            })
            .collect::<Result<_>>()?
    };
    let smoothed = section.samples > 1 || section.noise_sd > 0.0;
    let method = if smoothed { "grad-cam-smooth" } else { "grad-cam" };
    let mut files = Vec::new();
    let mut index = String::from("file_name,method,layer,prediction\n");
    for &i in &chosen {
        let sample = &split.samples[i];
        let name = &split.dataset.images[i].file_name;
        let map = if smoothed {
            smooth(&model, &sample.image, layer, section.samples, section.noise_sd, config.seed)?
        } else {
            grad_cam(&model, &sample.image, layer)?
        };
        let (heat, overlay) = export_heatmap(&map, &sample.image)?;
        let stem = Path::new(name).file_stem().map_or_else(|| name.clone(), |s| s.to_string_lossy().into_owned());
        files.push((PathBuf::from(format!("{stem}.heat.pgm")), heat));
        files.push((PathBuf::from(format!("{stem}.overlay.pgm")), overlay));
        let prediction = crate::nn::predict(&model, &sample.image)?;
        let _ = writeln!(index, "{name},{method},{layer},{prediction}");
    }
    files.push((PathBuf::from("index.csv"), index.into_bytes()));
    let mut staging = Staging::new();
    staging.dir(config.paths.reports.join("heatmaps"), files);
    staging.commit()?;
    Ok(format!("{method}: {} heatmaps at layer {layer}\n", chosen.len()))
}
