use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const QUICK: &str = r#"{
  "noise_dim": 2, "batch_size": 16, "generator_hidden": 8, "critic_hidden": 8,
  "n_critic": 2, "generator_lr": 0.01, "critic_lr": 0.01, "max_generator_steps": 12,
  "classifier_lr": 0.1, "classifier_epochs": 10, "classifier_batch_size": 32,
  "log_every": 1, "synthetic_per_class": 20
}"#;

const SPEC: &str = r#"{ "num_classes": 4, "feature_dim": 4, "counts": [40, 40, 40, 6], "seed": 3 }"#;

fn cafv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cafv"))
        .args(args)
        .env("CAFV_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = cafv(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let spec = root.join("spec.json");
    fs::write(&spec, SPEC).unwrap();
    let config = root.join("quick.json");
    fs::write(&config, QUICK).unwrap();
    let data = root.join("data");
    ok(&["gen-data", "--spec", s(&spec), "--out", s(&data)]);
    Fixture {
        _tmp: tmp,
        root,
        data,
        config,
    }
}

/// Relative path → bytes for every file under `dir` except `run.json`.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cafv(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(cafv(&["gen-data", "--bogus"]).status.code(), Some(1));
    assert_eq!(cafv(&["gradcheck", "--format", "xml"]).status.code(), Some(1));
    let o = cafv(&["gen-data", "--bogus"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(cafv(&["--help"]).status.code(), Some(0));
    assert_eq!(cafv(&["gen-data"]).status.code(), Some(1), "missing --out");
}

#[test]
fn validation_failures_write_nothing() {
    let f = fixture();
    let bad = f.root.join("bad.json");
    fs::write(&bad, r#"{ "batch_size": 0 }"#).unwrap();
    let out = f.root.join("never");
    let o = cafv(&["train-classifier", "--data", s(&f.data), "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    fs::write(&bad, r#"{ "unknown_key": 1 }"#).unwrap();
    let o = cafv(&["train-classifier", "--data", s(&f.data), "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let o = cafv(&["augment-eval", "--data", s(&f.data), "--rare", "99", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let broken = f.root.join("broken");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("train.csv"), "id,label,f0\n0,1,notanumber\n").unwrap();
    let o = cafv(&["train-classifier", "--data", s(&broken), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    assert!(!out.exists());

    let spec = f.root.join("badspec.json");
    fs::write(&spec, r#"{ "num_classes": 1 }"#).unwrap();
    assert_eq!(cafv(&["gen-data", "--spec", s(&spec), "--out", s(&out)]).status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn manifest_lists_every_output_with_its_digest() {
    let f = fixture();
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.data.join("run.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 3);
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    let on_disk: Vec<String> = snapshot(&f.data).into_keys().collect();
    assert_eq!(listed, on_disk);
    for o in m["outputs"].as_array().unwrap() {
        let bytes = fs::read(f.data.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], hex::encode(Sha256::digest(&bytes)));
    }
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn repeated_pipeline_is_byte_identical() {
    let f = fixture();
    let run = |tag: &str| {
        let out = f.root.join(tag);
        ok(&[
            "augment-eval",
            "--data",
            s(&f.data),
            "--config",
            s(&f.config),
            "--rare",
            "13",
            "--seeds",
            "2,1",
            "--out",
            s(&out),
            "--format",
            "binary",
        ]);
        snapshot(&out)
    };
    let a = run("a");
    let b = run("b");
    assert!(a.contains_key("seed-1/result.json") && a.contains_key("seed-2/error_histogram.svg"));
    assert!(a.contains_key("seed-1/synthetic.bin") && a.contains_key("summary.json"));
    assert_eq!(a, b);
}

#[test]
fn cli_resume_matches_an_uninterrupted_run() {
    let f = fixture();
    let cls = f.root.join("cls");
    ok(&["train-classifier", "--data", s(&f.data), "--config", s(&f.config), "--out", s(&cls)]);
    let straight = f.root.join("straight");
    ok(&[
        "train-gan", "--data", s(&f.data), "--classifier", s(&cls), "--config", s(&f.config), "--out", s(&straight),
    ]);
    let part = f.root.join("part");
    ok(&[
        "train-gan", "--data", s(&f.data), "--classifier", s(&cls), "--config", s(&f.config), "--out", s(&part),
        "--stop-at", "5",
    ]);
    let rest = f.root.join("rest");
    ok(&["train-gan", "--data", s(&f.data), "--resume", s(&part), "--out", s(&rest)]);
    for name in ["losses.jsonl", "weights.bin", "state.json"] {
        assert_eq!(
            fs::read(straight.join(name)).unwrap(),
            fs::read(rest.join(name)).unwrap(),
            "{name}"
        );
    }
    let o = cafv(&["train-gan", "--data", s(&f.data), "--resume", s(&part), "--config", s(&f.config), "--out", s(&rest)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn classifier_synthesis_and_evaluation_artifacts() {
    let f = fixture();
    let cls = f.root.join("cls");
    ok(&["train-classifier", "--data", s(&f.data), "--config", s(&f.config), "--out", s(&cls)]);
    let eval = f.root.join("eval");
    ok(&["evaluate", "--data", s(&f.data), "--classifier", s(&cls), "--out", s(&eval)]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap() >= metrics["mae"].as_f64().unwrap());
    assert!(fs::read_to_string(eval.join("error_histogram.svg")).unwrap().starts_with("<svg"));

    let gan = f.root.join("gan");
    ok(&["train-gan", "--data", s(&f.data), "--classifier", s(&cls), "--config", s(&f.config), "--out", s(&gan)]);
    let syn = f.root.join("syn");
    ok(&["synthesize", "--data", s(&f.data), "--gan", s(&gan), "--targets", "13,11", "--count", "7", "--out", s(&syn)]);
    let hist = fs::read_to_string(syn.join("synthetic_histogram.csv")).unwrap();
    assert_eq!(hist, "label,count\n11,7\n13,7\n");
    let o = cafv(&["synthesize", "--data", s(&f.data), "--gan", s(&gan), "--targets", "40", "--out", s(&syn)]);
    assert_eq!(o.status.code(), Some(1));

    let o = ok(&["inspect-checkpoint", s(&gan)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("kind: gan") && text.contains("noise_dim: 2") && text.contains("trainer_step: 12/12"));
    let o = ok(&["inspect-checkpoint", s(&cls)]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("kind: classifier"));
    assert_eq!(cafv(&["inspect-checkpoint", s(&f.data)]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_reports_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = ok(&["gradcheck", "--seed", "3", "--trials", "3", "--out", s(&out)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 9);
    assert!(text.contains("gradient_penalty") && !text.contains("FAIL"));
    assert!(out.join("gradcheck.json").is_file() && out.join("run.json").is_file());
}
