use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rcc_core::data::{write_feature_matrix, write_manifest, FeatureFormat, FeatureMatrix};
use rcc_core::faultgen::Raster;
use rcc_core::heatmap::{HeatmapLayer, HeatmapSet};
use rcc_core::rng::splitmix64;
use rcc_core::{Dataset, ImageRecord, Output as DnnOutput, Task};
use serde_json::Value;
use tempfile::TempDir;

fn rcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rcc(args);
    assert!(out.status.success(), "rcc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    rcc(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn unit(state: &mut u64) -> f64 {
    *state = splitmix64(*state);
    (*state >> 11) as f64 / (1u64 << 53) as f64
}

fn record(id: &str, path: Option<String>, failing: bool, tag: Option<&str>) -> ImageRecord {
    ImageRecord {
        id: id.into(),
        path,
        true_output: DnnOutput::Label("cat".into()),
        predicted_output: Some(DnnOutput::Label(if failing { "dog" } else { "cat" }.into())),
        scenario: tag.map(str::to_string),
    }
}

/// Three tagged blobs of 30 points in 5-D (centers 20 apart), 6 untagged
/// failures, and 5 correctly handled records.
struct Fixture {
    dir: TempDir,
    manifest: PathBuf,
    csv: PathBuf,
    fmx: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut st = 17u64;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for b in 0..3 {
        for i in 0..30 {
            let id = format!("s{b}_{i:02}");
            rows.push((0..5).map(|d| if d == b { 14.0 } else { 0.0 } + 2.0 * unit(&mut st) - 1.0).collect::<Vec<f64>>());
            records.push(record(&id, None, true, Some(&format!("s{b}"))));
        }
    }
    for i in 0..6 {
        rows.push((0..5).map(|_| 40.0 * unit(&mut st) - 10.0).collect());
        records.push(record(&format!("u_{i}"), None, true, None));
    }
    for i in 0..5 {
        rows.push(vec![0.0; 5]);
        records.push(record(&format!("ok_{i}"), None, false, None));
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let m = FeatureMatrix::from_rows(ids, &rows).unwrap();
    let manifest = dir.path().join("manifest.csv");
    write_manifest(&Dataset::new(records, Task::Classification).unwrap(), &manifest).unwrap();
    let csv = dir.path().join("features.csv");
    let fmx = dir.path().join("features.fmx");
    write_feature_matrix(&m, &csv, FeatureFormat::Csv).unwrap();
    write_feature_matrix(&m, &fmx, FeatureFormat::Fmx1).unwrap();
    Fixture { dir, manifest, csv, fmx }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assignment_ids(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect()
}

#[test]
fn cluster_then_evaluate_round_trip() {
    let f = fixture();
    let a = f.dir.path().join("out/a.csv");
    let r = f.dir.path().join("report.json");
    for algo in ["dbscan", "hdbscan"] {
        ok(&["cluster", "--features", s(&f.csv), "--manifest", s(&f.manifest), "--dimred", "none", "--algo", algo, "--seed", "3", "--out", s(&a)]);
        let ids = assignment_ids(&a);
        assert_eq!(ids.len(), 96, "only failing records are clustered");
        assert!(ids.iter().all(|id| !id.starts_with("ok_")));

        ok(&["evaluate", "--assignment", s(&a), "--manifest", s(&f.manifest), "--coverage-threshold", "0.9", "--out", s(&r)]);
        let v = json(&r);
        assert_eq!(v["scenarios"].as_array().unwrap().len(), 3);
        if algo == "hdbscan" {
            assert_eq!(v["coverage_pct"], 100.0);
            assert!(v["avg_purity"].as_f64().unwrap() >= 0.95);
        }
    }
}

#[test]
fn grid_is_identical_across_job_counts() {
    let f = fixture();
    let features = format!("{},{}", s(&f.csv), s(&f.fmx));
    let run = |jobs: &str, name: &str| {
        let out = f.dir.path().join(name);
        ok(&["grid", "--features", &features, "--manifest", s(&f.manifest), "--seed", "11", "--out", s(&out), "--jobs", jobs]);
        out
    };
    let one = run("1", "r1");
    let eight = run("8", "r8");
    let again = run("8", "r8b");

    let results = fs::read(one.join("results.json")).unwrap();
    assert_eq!(results, fs::read(eight.join("results.json")).unwrap());
    assert_eq!(results, fs::read(again.join("results.json")).unwrap());
    assert_eq!(json(&one.join("results.json"))["rows"].as_array().unwrap().len(), 18);

    let mut names: Vec<_> = fs::read_dir(one.join("assignments")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in &names {
        let a = fs::read(one.join("assignments").join(n)).unwrap();
        assert_eq!(a, fs::read(eight.join("assignments").join(n)).unwrap(), "{n:?}");
        assert_eq!(a, fs::read(again.join("assignments").join(n)).unwrap(), "{n:?}");
    }
    assert!(one.join("timings.json").is_file());
}

#[test]
fn report_re_emission_is_byte_identical() {
    let f = fixture();
    let results = f.dir.path().join("results");
    ok(&["grid", "--features", s(&f.csv), "--manifest", s(&f.manifest), "--seed", "5", "--out", s(&results)]);
    let t1 = f.dir.path().join("t1");
    let t2 = f.dir.path().join("t2");
    ok(&["report", "--in", s(&results), "--format", "csv", "--out", s(&t1)]);
    ok(&["report", "--in", s(&results), "--format", "csv", "--out", s(&t2)]);
    let csv = fs::read_to_string(t1.join("pipelines.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(t2.join("pipelines.csv")).unwrap());
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("source,dimred,clusterer,seed,"));

    ok(&["report", "--in", s(&results), "--format", "json", "--out", s(&t1)]);
    assert_eq!(json(&t1.join("pipelines.json")), json(&results.join("results.json")));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let f = fixture();
    let a = f.dir.path().join("a.csv");
    let base = ["cluster", "--features", s(&f.csv), "--manifest", s(&f.manifest), "--dimred", "none", "--algo", "kmeans"];

    assert_eq!(code(&["cluster", "--bogus"]), 2);
    assert_eq!(code(&[&base[..], &["--dimred", "tsne", "--seed", "1", "--out", s(&a)]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--out", s(&a)]].concat()), 2, "seed is required");

    let missing = f.dir.path().join("nope.csv");
    assert_eq!(code(&["cluster", "--features", s(&f.csv), "--manifest", s(&missing), "--dimred", "none", "--algo", "kmeans", "--seed", "1", "--out", s(&a)]), 3);
    assert_eq!(code(&["cluster", "--features", s(&missing), "--manifest", s(&f.manifest), "--dimred", "none", "--algo", "kmeans", "--seed", "1", "--out", s(&a)]), 3);

    // four failing images cannot support a k-means knee search
    let tiny = f.dir.path().join("tiny.csv");
    let records: Vec<ImageRecord> = (0..4).map(|i| record(&format!("s0_{i:02}"), None, true, Some("s0"))).collect();
    write_manifest(&Dataset::new(records, Task::Classification).unwrap(), &tiny).unwrap();
    let out = rcc(&["cluster", "--features", s(&f.csv), "--manifest", s(&tiny), "--dimred", "none", "--algo", "kmeans", "--seed", "1", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clustering stage"));
}

#[test]
fn flags_override_the_config_file() {
    let f = fixture();
    let cfg = f.dir.path().join("run.toml");
    fs::write(&cfg, format!("seed = 3\ndimred = \"none\"\nalgo = \"dbscan\"\nmanifest = {:?}\n", s(&f.manifest))).unwrap();
    let from_cfg = f.dir.path().join("cfg.csv");
    let explicit = f.dir.path().join("explicit.csv");
    let overridden = f.dir.path().join("over.csv");
    let hdb = f.dir.path().join("hdb.csv");

    ok(&["--config", s(&cfg), "cluster", "--features", s(&f.csv), "--out", s(&from_cfg)]);
    ok(&["cluster", "--features", s(&f.csv), "--manifest", s(&f.manifest), "--dimred", "none", "--algo", "dbscan", "--seed", "3", "--out", s(&explicit)]);
    assert_eq!(fs::read(&from_cfg).unwrap(), fs::read(&explicit).unwrap());

    ok(&["cluster", "--config", s(&cfg), "--features", s(&f.csv), "--algo", "hdbscan", "--out", s(&overridden)]);
    ok(&["cluster", "--features", s(&f.csv), "--manifest", s(&f.manifest), "--dimred", "none", "--algo", "hdbscan", "--seed", "3", "--out", s(&hdb)]);
    assert_eq!(fs::read(&overridden).unwrap(), fs::read(&hdb).unwrap());

    let json_cfg = f.dir.path().join("run.json");
    fs::write(&json_cfg, r#"{"seed": 3, "dimred": "none", "algo": "dbscan"}"#).unwrap();
    let from_json = f.dir.path().join("json.csv");
    ok(&["--config", s(&json_cfg), "cluster", "--features", s(&f.csv), "--manifest", s(&f.manifest), "--out", s(&from_json)]);
    assert_eq!(fs::read(&from_json).unwrap(), fs::read(&explicit).unwrap());
}

fn write_images(dir: &Path, n: usize) -> Vec<ImageRecord> {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut st = 5u64;
    (0..n)
        .map(|i| {
            let base = if i % 2 == 0 { 40.0 } else { 210.0 };
            let px = (0..16 * 16 * 3).map(|_| (base + 20.0 * unit(&mut st)) as u8).collect();
            let rel = format!("img/p{i:02}.png");
            Raster::new(16, 16, px).unwrap().save(&dir.join(&rel)).unwrap();
            record(&format!("p{i:02}"), Some(rel), false, None)
        })
        .collect()
}

#[test]
fn inject_writes_tagged_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let records = write_images(dir.path(), 12);
    let manifest = dir.path().join("m.csv");
    write_manifest(&Dataset::new(records, Task::Classification).unwrap(), &manifest).unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(&plan, r#"{"seed": 4, "scenarios": {"blur": {"total": 3}, "darkness": {"total": 2}}}"#).unwrap();
    let out = dir.path().join("corpus");
    ok(&["inject", "--manifest", s(&manifest), "--images", s(dir.path()), "--plan", s(&plan), "--out", s(&out)]);

    let text = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 12 + 5);
    assert_eq!(text.lines().filter(|l| l.ends_with(",blur")).count(), 3);
    assert_eq!(text.lines().filter(|l| l.ends_with(",darkness")).count(), 2);
    assert_eq!(fs::read_dir(out.join("images/blur")).unwrap().count(), 3);

    let again = dir.path().join("corpus2");
    ok(&["inject", "--manifest", s(&manifest), "--images", s(dir.path()), "--plan", s(&plan), "--out", s(&again)]);
    for name in ["images/blur", "images/darkness"] {
        for e in fs::read_dir(out.join(name)).unwrap() {
            let p = e.unwrap().path();
            assert_eq!(fs::read(&p).unwrap(), fs::read(again.join(name).join(p.file_name().unwrap())).unwrap());
        }
    }

    let bad_plan = dir.path().join("bad.json");
    fs::write(&bad_plan, r#"{"seed": 4, "scenarios": {"rain": {"total": 3}}}"#).unwrap();
    assert_eq!(code(&["inject", "--manifest", s(&manifest), "--images", s(dir.path()), "--plan", s(&bad_plan), "--out", s(&out)]), 3);
}

#[test]
fn raw_pixels_and_heatmap_sources() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = write_images(dir.path(), 16);
    for (i, r) in records.iter_mut().enumerate() {
        r.predicted_output = Some(DnnOutput::Label("dog".into()));
        r.scenario = Some(if i % 2 == 0 { "dark" } else { "bright" }.into());
    }
    let manifest = dir.path().join("m.csv");
    write_manifest(&Dataset::new(records.clone(), Task::Classification).unwrap(), &manifest).unwrap();

    let a = dir.path().join("raw.csv");
    ok(&["cluster", "--features", "raw:8", "--manifest", s(&manifest), "--dimred", "none", "--algo", "hdbscan", "--seed", "1", "--out", s(&a)]);
    let r = dir.path().join("raw.json");
    ok(&["evaluate", "--assignment", s(&a), "--manifest", s(&manifest), "--out", s(&r)]);
    assert_eq!(json(&r)["coverage_pct"], 100.0);

    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let layer = |name: &str, shift: f64| HeatmapLayer {
        name: name.into(),
        rows: 2,
        cols: 2,
        data: Array2::from_shape_fn((16, 4), |(i, j)| if (i % 2 == 0) == (j < 2) { 1.0 + shift * j as f64 } else { 0.0 }),
    };
    let index = HeatmapSet::new(ids, vec![layer("conv1", 0.0), layer("conv2", 0.5)]).unwrap().write(&dir.path().join("hm")).unwrap();
    let h = dir.path().join("hudd.csv");
    let out = ok(&["cluster", "--heatmaps", s(&index), "--manifest", s(&manifest), "--dimred", "none", "--algo", "hdbscan", "--seed", "1", "--out", s(&h)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("layer="));
    assert_eq!(assignment_ids(&h).len(), 16);

    let g = dir.path().join("grid");
    let hudd = format!("hudd:{}", s(&index));
    ok(&["grid", "--features", &format!("raw:8,{hudd}"), "--manifest", s(&manifest), "--seed", "2", "--out", s(&g)]);
    let rows = json(&g.join("results.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().filter(|r| r["source"] == "raw:8").all(|r| r["stand_in"] == true));
}
