use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use cystscan::grid::{Grid, LabelMap};
use cystscan::io::write_label_png;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cystscan")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = r#"
seed = 12
scenes = 4
images_per_sample = 2
prefix = "t"
render = true
n_cysts_range = [2, 5]

[metadata]
soil_layer = "top"

[scene]
height = 300
width = 280
cyst_axes = [14.0, 26.0]
"#;

#[test]
fn help_and_bad_flags() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["segment", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn empty_manifest_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    std::fs::write(&m, r#"{"samples": []}"#).unwrap();
    let o = run(&["segment", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no samples"), "{}", stderr(&o));
}

#[test]
fn missing_manifest_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["segment", "--manifest", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "overlap = 900\n").unwrap();
    let m = dir.path().join("manifest.json");
    std::fs::write(&m, r#"{"samples": [{"sample_id": "a", "images": [{"stem": "x"}]}]}"#).unwrap();
    let o = run(&["segment", "--manifest", s(&m), "--out", s(dir.path()), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overlap"));
}

#[test]
fn missing_score_file_names_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    std::fs::write(
        &m,
        r#"{"samples": [{"sample_id": "a", "images": [{"stem": "plot_7", "height": 600, "width": 600}]}]}"#,
    )
    .unwrap();
    let o = run(&["segment", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("plot_7") && err.contains("plot_7@0_0"), "{err}");
}

#[test]
fn generate_is_reproducible_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["generate", "--spec", s(&spec), "--out", s(&a)]).status.success());
    assert!(run(&["generate", "--spec", s(&spec), "--out", s(&b)]).status.success());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4 * 3 + 1);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n:?}");
    }

    let again = run(&["generate", "--spec", s(&spec), "--out", s(&a)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    assert!(run(&["generate", "--spec", s(&spec), "--out", s(&a), "--force"]).status.success());
}

#[test]
fn segment_evaluate_phenotype_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    let data = dir.path().join("data");
    let pred = dir.path().join("pred");
    let manifest = data.join("manifest.json");
    assert!(run(&["generate", "--spec", s(&spec), "--out", s(&data)]).status.success());
    let o = run(&["segment", "--manifest", s(&manifest), "--out", s(&pred), "--scorer", "mock", "--tile-size", "128", "--overlap", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let counts = std::fs::read_to_string(pred.join("counts.csv")).unwrap();
    assert!(counts.starts_with("# "));
    assert!(counts.contains("sample_id,n_images,automatic_count,manual_count"));
    assert!(!counts.contains("threads"));

    let eval = dir.path().join("eval");
    let o = run(&["evaluate", "--manifest", s(&manifest), "--predictions", s(&pred), "--out", s(&eval)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["AP"], 1.0);
    let table = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 11);

    let ph = dir.path().join("ph");
    let o = run(&["phenotype", "--manifest", s(&manifest), "--predictions", s(&pred), "--out", s(&ph)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ph.join("phenotype.json")).unwrap()).unwrap();
    // one population: no test, but counts agree exactly
    assert!(summary["anderson_darling"].is_null());
    assert!((summary["counts"]["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    // a missing prediction is reported
    let first = std::fs::read_dir(&pred)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".labels.png"))
        .unwrap();
    std::fs::remove_file(&first).unwrap();
    let o = run(&["evaluate", "--manifest", s(&manifest), "--predictions", s(&pred), "--out", s(&eval), "--force"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no prediction"));
}

/// Label map holding one blob per area, each filled row-major in a 40-wide
/// column band.
fn blobs(areas: &[u64]) -> LabelMap {
    let rows = areas.iter().map(|a| a.div_ceil(40)).max().unwrap_or(1) as usize;
    let mut m = Grid::filled(rows.max(1), areas.len().max(1) * 42, 0u32);
    for (k, &a) in areas.iter().enumerate() {
        for i in 0..a as usize {
            m.set(i / 40, k * 42 + i % 40, k as u32 + 1);
        }
    }
    m
}

struct Dataset {
    dir: tempfile::TempDir,
}

impl Dataset {
    /// `samples`: (sample id, soil layer, manual count, per-image areas).
    fn new(samples: &[(&str, &str, Option<u64>, Vec<Vec<u64>>)]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("pred")).unwrap();
        let mut entries = Vec::new();
        for (id, layer, manual, images) in samples {
            let mut ims = Vec::new();
            for (j, areas) in images.iter().enumerate() {
                let stem = format!("{id}_{j}");
                write_label_png(&dir.path().join("pred").join(format!("{stem}.labels.png")), &blobs(areas))
                    .unwrap();
                ims.push(serde_json::json!({ "stem": stem }));
            }
            entries.push(serde_json::json!({
                "sample_id": id,
                "metadata": { "soil_layer": layer },
                "manual_count": manual,
                "images": ims,
            }));
        }
        let manifest = serde_json::json!({ "samples": entries });
        std::fs::write(dir.path().join("manifest.json"), manifest.to_string()).unwrap();
        Self { dir }
    }

    fn phenotype(&self, extra: &[&str]) -> serde_json::Value {
        let root = self.dir.path();
        let out = root.join("ph");
        let mut args = vec![
            "phenotype",
            "--manifest",
            s(&root.join("manifest.json")).to_owned().leak(),
            "--predictions",
            s(&root.join("pred")).to_owned().leak(),
            "--out",
            s(&out).to_owned().leak(),
            "--force",
        ];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_str(&std::fs::read_to_string(out.join("phenotype.json")).unwrap()).unwrap()
    }
}

#[test]
fn counts_agreement_example() {
    let d = Dataset::new(&[
        ("a", "top", Some(2), vec![vec![600, 700]]),
        ("b", "top", Some(4), vec![vec![600, 700], vec![800, 900]]),
        ("c", "sub", Some(6), vec![vec![600; 6]]),
    ]);
    let v = d.phenotype(&[]);
    let c = &v["counts"];
    assert_eq!(c["n_pairs"], 3);
    assert!((c["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((c["slope"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(c["intercept"].as_f64().unwrap().abs() < 1e-12);

    let areas = std::fs::read_to_string(d.dir.path().join("ph/areas.csv")).unwrap();
    assert_eq!(areas.lines().filter(|l| !l.starts_with('#')).count(), 1 + 12);
    let hist = std::fs::read_to_string(d.dir.path().join("ph/histogram.csv")).unwrap();
    assert!(hist.contains("top,500.0,625.0,4,"), "{hist}");
    assert!(hist.contains("top,750.0,875.0,2,"), "{hist}");
}

fn two_layer_areas(seed: u64, shift: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = LogNormal::new(7.0, 0.35).unwrap();
    let sub = LogNormal::new(7.0 + shift, 0.35).unwrap();
    let mut draw = |d: &LogNormal<f64>| -> Vec<u64> {
        (0..40).map(|_| d.sample(&mut rng).round().clamp(50.0, 3900.0) as u64).collect()
    };
    let a = draw(&top);
    let b = draw(&sub);
    Dataset::new(&[("top_1", "top", None, vec![a]), ("sub_1", "sub", None, vec![b])])
}

#[test]
fn same_distribution_is_rarely_rejected() {
    let trials = 20;
    let mut above = 0;
    for t in 0..trials {
        let v = two_layer_areas(900 + t, 0.0).phenotype(&[]);
        if v["anderson_darling"]["p"].as_f64().unwrap() > 0.05 {
            above += 1;
        }
    }
    assert!(above >= 17, "only {above}/{trials} above 0.05");
}

#[test]
fn shifted_means_are_detected() {
    for t in 0..5 {
        let v = two_layer_areas(1900 + t, 0.6).phenotype(&[]);
        let p = v["anderson_darling"]["p"].as_f64().unwrap();
        assert!(p < 0.01, "trial {t}: p = {p}");
    }
}

#[test]
fn grouping_and_bin_width_flags() {
    let d = two_layer_areas(5, 0.0);
    let v = d.phenotype(&["--group-by", "sample", "--bin-width", "100"]);
    assert_eq!(v["bin_width"], 100.0);
    let ids: Vec<&str> = v["populations"].as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["top_1", "sub_1"]);
    let v = d.phenotype(&["--group-by", "density"]);
    assert_eq!(v["populations"][0]["id"], "unspecified");
    assert!(v["anderson_darling"].is_null());
    assert!(v["counts"].is_null());
}

#[test]
fn degenerate_counts_are_an_error() {
    let d = Dataset::new(&[
        ("a", "top", Some(3), vec![vec![600, 700]]),
        ("b", "sub", Some(3), vec![vec![600, 700, 800]]),
    ]);
    let root = d.dir.path();
    let o = run(&[
        "phenotype",
        "--manifest",
        s(&root.join("manifest.json")),
        "--predictions",
        s(&root.join("pred")),
        "--out",
        s(&root.join("ph")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zero variance"), "{}", stderr(&o));
}

#[test]
fn shifted_discs_give_partial_ap() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::create_dir(root.join("pred")).unwrap();
    let centers = [(30i64, 30i64), (30, 100), (100, 60)];
    let disc = |dr: i64| {
        Grid::from_fn(140, 140, |r, c| {
            centers
                .iter()
                .position(|&(y, x)| {
                    let (a, b) = (r as i64 - y - dr, c as i64 - x);
                    // 40 pixels across
                    (2 * a + 1).pow(2) + (2 * b + 1).pow(2) <= 40 * 40
                })
                .map_or(0, |k| k as u32 + 1)
        })
    };
    let (gt, pred) = (disc(0), disc(3));
    write_label_png(&root.join("d.gt.png"), &gt).unwrap();
    write_label_png(&root.join("pred/d.labels.png"), &pred).unwrap();
    std::fs::write(
        root.join("manifest.json"),
        r#"{"samples": [{"sample_id": "a", "images": [{"stem": "d", "ground_truth": "d.gt.png"}]}]}"#,
    )
    .unwrap();
    let o = run(&[
        "evaluate",
        "--manifest",
        s(&root.join("manifest.json")),
        "--predictions",
        s(&root.join("pred")),
        "--out",
        s(&root.join("eval")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("eval/metrics.json")).unwrap()).unwrap();
    let ap = v["AP"].as_f64().unwrap();

    // every disc has the same overlap with its shifted copy
    let area = gt.as_slice().iter().filter(|&&l| l == 1).count() as u64;
    let inter = gt
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .filter(|(g, p)| **g == 1 && **p == 1)
        .count() as u64;
    let union = 2 * area - inter;
    let expected: f64 = (0..10)
        .map(|k| if inter * 100 >= (50 + 5 * k) * union { 1.0 } else { 0.0 })
        .sum::<f64>()
        / 10.0;
    assert!(ap > 0.0 && ap < 1.0, "AP {ap}");
    assert!((ap - expected).abs() < 1e-12, "AP {ap} vs {expected}");
}
