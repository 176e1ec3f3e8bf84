use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reprlink"))
}

fn run(args: &[&str]) -> i32 {
    let argv = std::iter::once("reprlink").chain(args.iter().copied());
    reprlink::cli::dispatch(argv)
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_string_lossy().into_owned()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let args = ["gen", "--mode", "linear", "--classes", "5", "--per-class", "200", "--seed", "1", "--out"];
        let out = p(t.path(), name);
        let mut a: Vec<&str> = args.to_vec();
        a.push(&out);
        assert_eq!(run(&a), 0);
    }
    let (a, b) = (tree(&t.path().join("a")), tree(&t.path().join("b")));
    assert_eq!(a.len(), 5 * 200 * 4 + 2 + 2 + 1);
    assert!(a == b);
}

#[test]
fn fit_then_eval_is_exact() {
    let t = tempfile::tempdir().unwrap();
    let (data, link, eval) = (p(t.path(), "data"), p(t.path(), "link"), p(t.path(), "eval"));
    assert_eq!(run(&["--seed", "1", "--out", &data, "gen", "--per-class", "100"]), 0);
    assert_eq!(run(&["--out", &link, "fit-link", "--data", &data]), 0);
    assert_eq!(run(&["--out", &eval, "eval-link", "--data", &data, "--link", &link, "--test-per-class", "20"]), 0);
    let v: Value = serde_json::from_slice(&std::fs::read(t.path().join("eval/eval_link.json")).unwrap()).unwrap();
    let mse = v["mse_w"].as_f64().unwrap();
    assert!(mse < 1e-6, "{mse}");
    assert!(v["shuffled_mse_w"].as_f64().unwrap() > mse);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_dataset_is_data_error() {
    let t = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--out", &p(t.path(), "o"), "fit-link", "--data", &p(t.path(), "nope")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn manifest_lists_every_output_once() {
    let t = tempfile::tempdir().unwrap();
    let data = p(t.path(), "data");
    assert_eq!(run(&["--out", &data, "gen", "--mode", "shapes", "--per-class", "12"]), 0);
    let run_json: Value = serde_json::from_slice(&std::fs::read(t.path().join("data/run.json")).unwrap()).unwrap();
    let listed: Vec<&str> = run_json["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let unique: BTreeSet<&str> = listed.iter().copied().collect();
    assert_eq!(unique.len(), listed.len());
    let on_disk: BTreeSet<String> = tree(&t.path().join("data")).into_iter().map(|(f, _)| f).filter(|f| f != "run.json").collect();
    assert_eq!(on_disk, unique.iter().map(|s| s.to_string()).collect());
    let subs: Vec<String> = run_json["substitutions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["replaced"].as_str().unwrap().to_lowercase())
        .collect();
    for name in ["t-sne", "pump", "moco"] {
        assert!(subs.iter().any(|s| s.contains(name)), "{name} missing from {subs:?}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 5, "world": {"classes": 3, "per_class": 15}}"#).unwrap();
    let data = p(t.path(), "data");
    let c = cfg.to_string_lossy().into_owned();
    assert_eq!(run(&["--config", &c, "--out", &data, "gen", "--per-class", "11"]), 0);
    let gen: Value = serde_json::from_slice(&std::fs::read(t.path().join("data/gen.json")).unwrap()).unwrap();
    assert_eq!(gen["samples"], 33);
    let run_json: Value = serde_json::from_slice(&std::fs::read(t.path().join("data/run.json")).unwrap()).unwrap();
    assert_eq!(run_json["config"]["seed"], 5);
}

#[test]
fn bad_config_value_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let data = p(t.path(), "data");
    assert_eq!(run(&["--out", &data, "gen", "--per-class", "0"]), 1);
    assert_eq!(run(&["--out", &data, "sweep", "--data", &data, "--link", &data, "--units", "3-1"]), 1);
}

#[test]
fn output_root_from_environment() {
    let t = tempfile::tempdir().unwrap();
    let out = bin()
        .env(reprlink::cli::OUT_ENV, t.path())
        .args(["gen", "--per-class", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(t.path().join("gen/manifest.json").is_file());
}
