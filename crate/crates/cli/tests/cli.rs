use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vlf_core::pipeline::{LifecycleConfig, SandboxDriverConfig};
use vlf_core::validation::{MockDriver, ScriptedResult};

fn vlf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlf"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vlf(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path) -> PathBuf {
    let c = dir.join("corpus");
    ok(&["seed-corpus", s(&c)]);
    c
}

#[test]
fn seed_corpus_and_split() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let labels: Value =
        serde_json::from_str(&fs::read_to_string(c.join("labels.json")).unwrap()).unwrap();
    assert_eq!(labels.as_object().unwrap().len(), 60);

    let a = ok(&[
        "split",
        "--labels",
        s(&c.join("labels.json")),
        "--seed",
        "4",
    ]);
    let b = ok(&[
        "split",
        "--labels",
        s(&c.join("labels.json")),
        "--seed",
        "4",
    ]);
    assert_eq!(a, b);
    let lists: Value = serde_json::from_str(&a).unwrap();
    let n = |k: &str| lists[k].as_array().unwrap().len();
    assert_eq!((n("train"), n("val"), n("test")), (48, 6, 6));
}

#[test]
fn parse_prints_a_loadable_document() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let out = ok(&["parse", s(&c.join("java/SqliConcat.java"))]);
    let doc = vlf_core::uast::load_document(out.trim().as_bytes()).unwrap();
    assert!(doc.node_count > 10);
    assert!(vlf_core::uast::validate_schema(&doc).is_valid());
}

#[test]
fn errors_exit_nonzero() {
    let out = vlf(&["parse", "/nonexistent/x.py"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!vlf(&["lifecycle", "somewhere"]).status.success());
    assert!(!vlf(&["bogus"]).status.success());
}

#[test]
fn train_detect_lifecycle_report() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path());
    let model = tmp.path().join("model.json");
    ok(&[
        "train",
        "--synthetic",
        "80",
        "--seed",
        "2",
        "--out",
        s(&model),
    ]);

    let det = ok(&["detect", "--model", s(&model), s(&c.join("py"))]);
    let lines: Vec<Value> = det
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 20);
    assert!(lines.iter().all(|l| l["flag"] == 0 || l["flag"] == 1));

    let mut script = MockDriver::new();
    script.insert(
        "py/sqli_concat.py",
        "sqli-tautology/0",
        ScriptedResult {
            stdout: "VLF_EVENT {\"sink\":\"execute\",\"arg\":\"x {marker}\"}\n".into(),
            ..ScriptedResult::default()
        },
    );
    let script_path = tmp.path().join("script.json");
    fs::write(&script_path, serde_json::to_string(&script.script).unwrap()).unwrap();
    let mut cfg = LifecycleConfig::new(&model, tmp.path().join("run"));
    cfg.sandbox_driver = SandboxDriverConfig::Mock {
        script: script_path,
    };
    let cfg_path = tmp.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let summary = ok(&["lifecycle", "--config", s(&cfg_path), s(&c)]);
    assert!(summary.contains("60 samples"), "{summary}");
    assert!(summary.contains("1 exploited"), "{summary}");
    assert!(tmp.path().join("run/manifest.json").exists());

    let report = ok(&[
        "report",
        "--config",
        s(&cfg_path),
        "--labels",
        s(&c.join("labels.json")),
        "--json",
    ]);
    let report: Value = serde_json::from_str(&report).unwrap();
    assert!(report.is_object());
}
