mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use boneage_core::cli::RunConfig;
use boneage_core::imageops::{pgm, rasterize, Mask};
use boneage_core::annotation::Point;
use boneage_core::nn::{checkpoint, Model, TargetScaling};
use boneage_core::store;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cli").join(name)
}

fn boneage(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boneage"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = boneage(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Copies a fixture config into a fresh directory.
fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(fixture(config), dir.path().join("run.json")).unwrap();
    dir
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = boneage(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(boneage(&["train"], dir.path()).status.code(), Some(2));
    assert_eq!(boneage(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1() {
    let dir = workspace("gen.json");
    let out = boneage(&["train", "--config", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    fs::write(dir.path().join("bad.json"), r#"{"seed": 1, "synth": {"seed": 2}}"#).unwrap();
    assert_eq!(boneage(&["gen-data", "--config", "bad.json"], dir.path()).status.code(), Some(1));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn gen_data_golden_tree() {
    let dir = workspace("gen.json");
    let stdout = ok(&["gen-data", "--config", "run.json"], dir.path());
    assert!(stdout.starts_with("wrote 4 images"));
    let files = tree(&dir.path().join("data"));
    let names: Vec<String> = files.keys().map(|p| p.display().to_string()).collect();
    assert_eq!(
        names,
        [
            "annotations.json",
            "images/synth_0001.pgm",
            "images/synth_0002.pgm",
            "images/synth_0003.pgm",
            "images/synth_0004.pgm",
            "labels.csv"
        ]
    );
    for (path, bytes) in &files {
        common::check_golden(&format!("gen-data/{}", path.display()), bytes);
    }
    // rerunning replaces the directory with identical content
    ok(&["gen-data", "--config", "run.json"], dir.path());
    assert_eq!(tree(&dir.path().join("data")), files);
}

fn eval_model(config: &RunConfig) -> Model {
    let mut model = Model::new(config.model.clone(), 5).unwrap();
    model.set_target_scaling(TargetScaling { offset: 48.0, scale: 24.0 }).unwrap();
    model
}

#[test]
fn evaluate_pinned_checkpoint() {
    let dir = workspace("tiny.json");
    let config = RunConfig::parse(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    let ckpt = checkpoint::encode(&eval_model(&config));
    common::check_golden("cli/eval.ckpt", &ckpt);
    fs::write(dir.path().join("model.ckpt"), &ckpt).unwrap();
    ok(&["gen-data", "--config", "run.json"], dir.path());
    ok(&["segment", "--config", "run.json"], dir.path());

    let stdout = ok(&["evaluate", "--config", "run.json"], dir.path());
    let reports = dir.path().join("reports");
    let json = fs::read(reports.join("metrics.json")).unwrap();
    common::check_golden("cli/metrics.json", &json);
    common::check_golden("cli/scatter.csv", &fs::read(reports.join("scatter.csv")).unwrap());
    assert_eq!(stdout, fs::read_to_string(reports.join("metrics.txt")).unwrap());

    // the scatter rows reproduce the reported MAE
    let csv = fs::read_to_string(reports.join("scatter.csv")).unwrap();
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    let mae = rows.iter().map(|(a, p)| (a - p).abs()).sum::<f64>() / 3.0;
    let report: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert!((report["mae"].as_f64().unwrap() - mae).abs() < 1e-12);
}

#[test]
fn training_is_reproducible_across_runs_and_workers() {
    let a = workspace("tiny.json");
    ok(&["gen-data", "--config", "run.json"], a.path());
    ok(&["segment", "--config", "run.json"], a.path());
    let b = tempfile::tempdir().unwrap();
    for name in ["run.json", "data", "segmented"] {
        copy_all(&a.path().join(name), &b.path().join(name));
    }
    ok(&["train", "--config", "run.json"], a.path());
    ok(&["train", "--config", "run.json", "--workers", "3"], b.path());
    for file in ["model.ckpt", "reports/history.csv", "reports/head_cv.csv", "reports/run_config.json"] {
        let x = fs::read(a.path().join(file)).unwrap();
        assert_eq!(x, fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let history = fs::read_to_string(a.path().join("reports/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let stored = fs::read_to_string(a.path().join("reports/run_config.json")).unwrap();
    assert_eq!(RunConfig::parse(&stored).unwrap().to_canonical_json(), stored);
}

fn read_mask(path: &Path) -> Mask {
    let img = pgm::read(path).unwrap();
    Mask::new(img.width(), img.height(), img.data().iter().map(|&v| v > 0.5).collect()).unwrap()
}

fn copy_all(from: &Path, to: &Path) {
    if from.is_dir() {
        fs::create_dir_all(to).unwrap();
        for entry in fs::read_dir(from).unwrap() {
            let entry = entry.unwrap();
            copy_all(&entry.path(), &to.join(entry.file_name()));
        }
    } else {
        fs::copy(from, to).unwrap();
    }
}

#[test]
fn pipeline_leaves_inputs_untouched() {
    let dir = workspace("tiny.json");
    ok(&["gen-data", "--config", "run.json"], dir.path());
    let data = tree(&dir.path().join("data"));
    let config = fs::read(dir.path().join("run.json")).unwrap();
    ok(&["segment", "--config", "run.json"], dir.path());
    let segmented = tree(&dir.path().join("segmented"));
    ok(&["train", "--config", "run.json"], dir.path());
    let stdout = ok(&["cv-lambda", "--config", "run.json"], dir.path());
    assert!(stdout.starts_with("best lambda"));
    ok(&["evaluate", "--config", "run.json"], dir.path());
    ok(&["explain", "--config", "run.json"], dir.path());
    assert_eq!(tree(&dir.path().join("data")), data);
    assert_eq!(tree(&dir.path().join("segmented")), segmented);
    assert_eq!(fs::read(dir.path().join("run.json")).unwrap(), config);

    let reports = tree(&dir.path().join("reports"));
    for name in ["cv_lambda.csv", "features.csv", "metrics.json", "heatmaps/index.csv"] {
        assert!(reports.contains_key(Path::new(name)), "{name}");
    }
    let index = String::from_utf8(reports[Path::new("heatmaps/index.csv")].clone()).unwrap();
    assert_eq!(index.lines().count(), 3);
    assert!(index.lines().skip(1).all(|l| l.contains(",grad-cam-smooth,1,")));
    let leftovers = tree(dir.path()).into_keys().filter(|p| p.display().to_string().contains(".partial")).count();
    assert_eq!(leftovers, 0);
}

#[test]
fn segment_sets_background_outside_masks() {
    let dir = workspace("tiny.json");
    ok(&["gen-data", "--config", "run.json"], dir.path());
    ok(&["segment", "--config", "run.json"], dir.path());
    let (dataset, originals) = store::load_dataset(&dir.path().join("data")).unwrap();
    let (segmented_set, segmented) = store::load_dataset(&dir.path().join("segmented")).unwrap();
    assert_eq!(segmented_set, dataset);
    for ((rec, orig), seg) in dataset.images.iter().zip(&originals).zip(&segmented) {
        let mask = read_mask(&dir.path().join("segmented/masks").join(&rec.file_name));
        assert!(mask.bits().iter().any(|&b| b) && !mask.bits().iter().all(|&b| b));
        for y in 0..orig.height() {
            for x in 0..orig.width() {
                let expected = if mask.get(x, y) { orig.get(x, y) } else { 0.0 };
                assert_eq!(seg.get(x, y), expected, "{} ({x},{y})", rec.file_name);
            }
        }
    }
}

#[test]
fn segment_refuses_to_overwrite_input() {
    let dir = workspace("gen.json");
    ok(&["gen-data", "--config", "run.json"], dir.path());
    let mut config: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    config["paths"]["segmented"] = "data".into();
    fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
    let before = tree(&dir.path().join("data"));
    assert_eq!(boneage(&["segment", "--config", "run.json"], dir.path()).status.code(), Some(1));
    assert_eq!(tree(&dir.path().join("data")), before);
}

#[test]
fn segment_with_via_override() {
    let dir = workspace("gen.json");
    ok(&["gen-data", "--config", "run.json"], dir.path());
    // left half of every image, dimensions resolved from the PGM headers
    let mut metadata = serde_json::Map::new();
    for i in 1..=4 {
        let name = format!("synth_{i:04}.pgm");
        metadata.insert(
            format!("{name}0"),
            serde_json::json!({
                "filename": name,
                "size": 0,
                "regions": [{"shape_attributes": {"name": "polygon", "all_points_x": [0, 8, 8, 0], "all_points_y": [0, 0, 16, 16]},
                             "region_attributes": {}}],
                "file_attributes": {}
            }),
        );
    }
    fs::write(dir.path().join("via.json"), serde_json::Value::Object(metadata).to_string()).unwrap();
    let mut config: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    config["paths"]["annotations"] = "via.json".into();
    config["segment"] = serde_json::json!({"background": 0.5});
    fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
    ok(&["segment", "--config", "run.json"], dir.path());

    let half = rasterize(
        &[Point::new(0.0, 0.0), Point::new(8.0, 0.0), Point::new(8.0, 16.0), Point::new(0.0, 16.0)],
        16,
        16,
    )
    .unwrap();
    let (dataset, originals) = store::load_dataset(&dir.path().join("data")).unwrap();
    let (via_set, segmented) = store::load_dataset(&dir.path().join("segmented")).unwrap();
    for ((rec, orig), seg) in dataset.images.iter().zip(&originals).zip(&segmented) {
        let mask = read_mask(&dir.path().join("segmented/masks").join(&rec.file_name));
        assert_eq!(mask, half);
        for y in 0..16 {
            for x in 0..16 {
                let expected = if x < 8 { orig.get(x, y) } else { 0.5 };
                assert!((seg.get(x, y) - expected).abs() <= 0.5 / 255.0);
            }
        }
    }
    // ages come from the sidecar even though VIA carries none
    let ages: Vec<_> = via_set.images.iter().map(|r| r.target_age).collect();
    assert_eq!(ages, dataset.images.iter().map(|r| r.target_age).collect::<Vec<_>>());
}
