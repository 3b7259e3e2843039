use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ascn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ascn"))
        .args(args)
        .env("ASCN_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ascn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ascn(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small stack so the CLI tests stay quick.
const SMALL_MODEL: &str = r#"{
  "model": {
    "stages": [{"conv": {"kernels": 4}}, "pool", {"conv": {"kernels": 6}}],
    "supports": 2,
    "adaptive": {"m_min": 3, "m_max": 10},
    "pool_rate": 4,
    "hidden": 8,
    "num_classes": 3,
    "seed": 0
  },
  "train": {"epochs": 2, "batch_size": 4, "optimizer": {"kind": "adam", "lr": 0.005, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}, "seed": 0}
}"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    fs::write(&p, SMALL_MODEL).unwrap();
    p
}

fn dataset(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&["datagen", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    out
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn datagen_writes_manifest_and_companion() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    ok(&["datagen", "--count", "20", "--decimate", "4", "--seed", "3", "--out", s(&out)]);
    let clouds = fs::read_dir(out.join("clouds")).unwrap().count();
    assert_eq!(clouds, 60);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["items"].as_array().unwrap().len(), 60);
    assert_eq!(manifest["class_names"].as_array().unwrap().len(), 3);

    let thin: Value =
        serde_json::from_str(&fs::read_to_string(out.join("decimated_x4/manifest.json")).unwrap()).unwrap();
    assert_eq!(thin["items"].as_array().unwrap().len(), 60);
    assert_eq!(thin["metadata"]["density"], "decimated_x4");

    let again = tmp.path().join("e");
    ok(&["datagen", "--count", "20", "--decimate", "4", "--seed", "3", "--out", s(&again)]);
    assert_eq!(files_in(&out), files_in(&again));
}

#[test]
fn analyze_reports_entropy_curves() {
    let tmp = TempDir::new().unwrap();
    let line = tmp.path().join("line.csv");
    let rows: String = (0..40).map(|i| format!("{},0,0\n", i as f64 * 0.1)).collect();
    fs::write(&line, rows).unwrap();
    let csv = ok(&["analyze", s(&line)]);
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "point_index,m_star,entropy_m3,entropy_m4,entropy_m5,entropy_m6,entropy_m7,entropy_m8,entropy_m9,entropy_m10"
    );
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 40);
    for row in body {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "3");
        for e in &cols[2..] {
            assert!(e.parse::<f64>().unwrap().abs() < 1e-9);
        }
    }

    let out = tmp.path().join("report.csv");
    let summary = ok(&["analyze", s(&line), "--m-min", "4", "--m-max", "6", "--out", s(&out)]);
    assert!(summary.contains("wrote 40 rows"));
    assert!(fs::read_to_string(&out).unwrap().starts_with("point_index,m_star,entropy_m4,entropy_m5,entropy_m6\n"));

    let json: Value = serde_json::from_str(&ok(&["analyze", s(&line), "--format", "json"])).unwrap();
    assert_eq!(json["points"].as_array().unwrap().len(), 40);

    assert_eq!(code(&["analyze", s(&tmp.path().join("missing.csv"))]), 3);
    assert_eq!(code(&["analyze", s(&line), "--m-min", "5", "--m-max", "4"]), 2);
}

#[test]
fn analyze_sphere_is_near_isotropic() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), "d", 1, 4);
    let sphere = data.join("clouds/00002.csv");
    let json: Value = serde_json::from_str(&ok(&["analyze", s(&sphere), "--format", "json"])).unwrap();
    let pts = json["points"].as_array().unwrap();
    let mean: f64 = pts
        .iter()
        .map(|p| p["entropies"][7].as_f64().unwrap())
        .sum::<f64>()
        / pts.len() as f64;
    // ten neighbours on a sphere of ~300 points are mostly planar patches
    assert!(mean > 0.3 && mean < 3f64.ln(), "{mean}");
}

#[test]
fn train_eval_infer_round() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), "d", 3, 1);
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    let out = ok(&["train", s(&data), "--config", s(&cfg), "--out", s(&run), "--epochs", "3"]);
    assert!(out.contains("trained 3 epochs"));
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["epoch"], i);
        assert!(r["loss"].as_f64().unwrap().is_finite());
        assert!(r["train_acc"].as_f64().is_some());
    }

    // same seed, same bytes
    let run2 = tmp.path().join("run2");
    ok(&["train", s(&data), "--config", s(&cfg), "--out", s(&run2), "--epochs", "3"]);
    assert_eq!(fs::read(run.join("model.ascn")).unwrap(), fs::read(run2.join("model.ascn")).unwrap());
    assert_eq!(log, fs::read_to_string(run2.join("train_log.jsonl")).unwrap());

    let model = run.join("model.ascn");
    let report = tmp.path().join("eval.json");
    let text = ok(&["eval", s(&model), s(&data), "--out", s(&report), "--workers", "2"]);
    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let percent = json["accuracy"]["percent"].as_f64().unwrap();
    assert!(text.starts_with(&format!("Accuracy: {percent:.1}% (")), "{text}");
    let confusion = json["confusion"].as_array().unwrap();
    let diag: u64 = (0..3).map(|i| confusion[i][i].as_u64().unwrap()).sum();
    assert_eq!(diag, json["accuracy"]["correct"].as_u64().unwrap());
    assert_eq!(json["accuracy"]["total"], 9);

    let cloud = data.join("clouds/00004.csv");
    let json: Value = serde_json::from_str(&ok(&["infer", s(&model), s(&cloud), "--format", "json"])).unwrap();
    let label = json["label"].as_u64().unwrap();
    assert!(label < 3);
    let total: f64 = json["scores"].as_array().unwrap().iter().map(|v| v["score"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let text = ok(&["infer", s(&model), s(&cloud)]);
    assert!(text.starts_with("class: "));

    let tiny = tmp.path().join("tiny.csv");
    fs::write(&tiny, "0,0,0\n1,0,0\n").unwrap();
    assert_eq!(code(&["infer", s(&model), s(&tiny)]), 6);
}

#[test]
fn zero_learning_rate_keeps_the_model() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), "d", 2, 5);
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["train", s(&data), "--config", s(&cfg), "--out", s(&a), "--epochs", "0"]);
    ok(&["train", s(&data), "--config", s(&cfg), "--out", s(&b), "--epochs", "2", "--lr", "0"]);
    assert_eq!(fs::read(a.join("model.ascn")).unwrap(), fs::read(b.join("model.ascn")).unwrap());
}

#[test]
fn class_mismatch_exits_5() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), "d", 2, 1);
    let spec = tmp.path().join("two.json");
    fs::write(
        &spec,
        r#"{"classes": [
            {"name": "line", "shape": "line", "count": 2, "points": [100, 120], "noise": [0.01, 0.01], "scale": [1.0, 1.0]},
            {"name": "sphere", "shape": "sphere", "count": 2, "points": [100, 120], "noise": [0.01, 0.01], "scale": [1.0, 1.0]}
        ]}"#,
    )
    .unwrap();
    let two = tmp.path().join("two");
    ok(&["datagen", "--config", s(&spec), "--out", s(&two)]);
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", s(&data), "--config", s(&cfg), "--out", s(&run), "--epochs", "1"]);
    assert_eq!(code(&["eval", s(&run.join("model.ascn")), s(&two)]), 5);
    assert_eq!(code(&["train", s(&two), "--config", s(&cfg), "--out", s(&run)]), 5);
}

#[test]
fn bad_arguments_and_files() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&["datagen"]), 2);
    assert_eq!(code(&["nonsense"]), 2);
    assert_eq!(code(&["datagen", "--out", "x", "--format", "yaml"]), 2);
    assert_eq!(code(&["train", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("r"))]), 3);
    let garbage = tmp.path().join("garbage.ascn");
    fs::write(&garbage, b"ASCN\x01\x00\x00\x00junk").unwrap();
    let cloud = tmp.path().join("c.csv");
    fs::write(&cloud, "0,0,0\n").unwrap();
    assert_eq!(code(&["infer", s(&garbage), s(&cloud)]), 3);
    let bad_cfg = tmp.path().join("bad.json");
    fs::write(&bad_cfg, "{ not json").unwrap();
    assert_eq!(code(&["datagen", "--config", s(&bad_cfg), "--out", s(&tmp.path().join("o"))]), 2);
}

#[test]
fn crossdomain_tables_agree() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), "dense", 2, 8);
    let spec = tmp.path().join("exp.json");
    let model: Value = serde_json::from_str(SMALL_MODEL).unwrap();
    let exp = serde_json::json!({
        "train": {"path": "dense"},
        "tests": [
            {"tag": "dense", "path": "dense"},
            {"tag": "decimated_x2", "path": "dense", "decimate": 2},
            {"tag": "fresh", "generate": {"classes": [
                {"name": "line", "shape": "line", "count": 1, "points": [200, 220], "noise": [0.01, 0.01], "scale": [1.0, 1.0]},
                {"name": "plane", "shape": "plane", "count": 1, "points": [200, 220], "noise": [0.01, 0.01], "scale": [1.0, 1.0]},
                {"name": "sphere", "shape": "sphere", "count": 1, "points": [200, 220], "noise": [0.01, 0.01], "scale": [1.0, 1.0]}
            ]}, "seed": 4}
        ],
        "model": model["model"],
        "epochs": 1,
        "seeds": [0, 1],
        "output_dir": "exp-out"
    });
    fs::write(&spec, serde_json::to_string_pretty(&exp).unwrap()).unwrap();
    let _ = data;
    let md = ok(&["crossdomain", "--config", s(&spec)]);
    let out = tmp.path().join("exp-out");
    assert_eq!(md, fs::read_to_string(out.join("results.md")).unwrap());
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let tags: Vec<&str> = json["tests"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert_eq!(tags, ["dense", "decimated_x2", "fresh"]);

    // markdown cells are the JSON numbers to one decimal
    let rows: Vec<Vec<String>> = md
        .lines()
        .skip(2)
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (i, seed) in json["seeds"].as_array().unwrap().iter().enumerate() {
        assert_eq!(rows[i][0], seed["seed"].to_string());
        for (j, a) in seed["accuracies"].as_array().unwrap().iter().enumerate() {
            assert_eq!(rows[i][j + 1], format!("{:.1}", a.as_f64().unwrap()));
        }
    }
    for (j, m) in json["mean"].as_array().unwrap().iter().enumerate() {
        assert_eq!(rows[2][j + 1], format!("{:.1}", m.as_f64().unwrap()));
    }
    assert!(out.join("model_seed0.ascn").exists());

    let empty = tmp.path().join("empty.json");
    let mut e = exp.clone();
    e["tests"] = serde_json::json!([]);
    fs::write(&empty, e.to_string()).unwrap();
    assert_eq!(code(&["crossdomain", "--config", s(&empty)]), 2);
    let mut e = exp.clone();
    e["train"] = serde_json::json!({"path": "missing"});
    fs::write(&empty, e.to_string()).unwrap();
    assert_eq!(code(&["crossdomain", "--config", s(&empty)]), 3);
}
