use std::path::Path;
use std::process::Command;

use ala_core::cli::main_with_args;

const SMALL: &str = r#"{
  "data": {"kind": "confusable-gaussians", "classes": 4, "dim": 6, "n_train": 80, "n_val": 40, "n_test": 40},
  "hidden": [8], "k": 5, "steps": 2, "children": 2, "history": 3, "eval_points": 2, "batch_size": 16
}"#;

fn ala(args: &[&str]) -> i32 {
    let argv = std::iter::once("ala").chain(args.iter().copied());
    main_with_args(argv)
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("c.json");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

/// Every file under `dir` with its bytes, keyed by relative path.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn train_twice_gives_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let code = ala(&["train", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    let (da, db) = (dir_contents(&a), dir_contents(&b));
    assert!(da.iter().any(|(n, _)| n == "policy.json"));
    assert!(da.iter().any(|(n, _)| n == "records.csv"));
    assert_eq!(da, db);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_eq!(ala(&["train", "--bogus"]), 2);
    assert_eq!(ala(&["frobnicate"]), 2);
    assert_eq!(ala(&["baseline", "--mode", "oracle"]), 2);
    assert_eq!(ala(&["train", "--controller-depth", "4"]), 2);
    assert_eq!(ala(&["train", "--metric", "f1"]), 2);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"k": 0}"#).unwrap();
    assert_eq!(ala(&["train", "--config", bad.to_str().unwrap()]), 2);
    std::fs::write(&bad, r#"{"unknown_knob": 1}"#).unwrap();
    assert_eq!(ala(&["train", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(ala(&["train", "--config", &cfg, "--children", "0"]), 2);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ala");
    let bad = Command::new(exe).args(["train", "--nope"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
    let help = Command::new(exe).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn every_subcommand_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    assert_eq!(ala(&["train", "--config", &cfg, "--out", &p("t")]), 0);
    for mode in ["fixed", "random-phi", "confusion-phi", "bandit"] {
        let out = p(mode);
        assert_eq!(ala(&["baseline", "--mode", mode, "--config", &cfg, "--out", &out]), 0, "{mode}");
    }
    let policy = p("t/policy.json");
    assert_eq!(ala(&["transfer", "--policy", &policy, "--config", &cfg, "--out", &p("tf")]), 0);
    assert_eq!(
        ala(&["transfer", "--policy", &policy, "--finetune", "--config", &cfg, "--out", &p("ft")]),
        0
    );
    let ckpt = p("t/models/child0.json");
    assert!(Path::new(&ckpt).exists());
    assert_eq!(
        ala(&["analyze-surface", "--checkpoint", &ckpt, "--resolution", "5", "--config", &cfg, "--out", &p("s")]),
        0
    );
    assert!(tmp.path().join("s/surface.json").exists());
    assert_eq!(ala(&["export-curves", &p("t"), &p("fixed"), "--out", &p("curves")]), 0);
    for f in ["curves.csv", "summary.csv", "phi.csv"] {
        assert!(tmp.path().join("curves").join(f).exists(), "{f}");
    }
    assert_eq!(ala(&["gen-data", "--config", &cfg, "--out", &p("data")]), 0);
    let train = std::fs::read_to_string(tmp.path().join("data/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 80);
    assert_eq!(train.lines().next().unwrap().split(',').count(), 1 + 6);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("o");
    let code = ala(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--children",
        "1",
        "--reward",
        "val-loss",
        "--history",
        "2",
        "--controller-depth",
        "1",
        "--ablate",
        "delta",
        "--ablate",
        "iter",
        "--no-replay",
        "--episode-len",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    let c = &run["config"];
    assert_eq!(c["seed"], 3);
    assert_eq!(c["children"], 1);
    assert_eq!(c["history"], 2);
    assert_eq!(c["controller_depth"], 1);
    assert_eq!(c["episode_len"], 2);
    assert_eq!(c["replay"]["enabled"], false);
    assert_eq!(c["ablate"].as_array().unwrap().len(), 2);
}

#[test]
fn transfer_with_mismatched_layout_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let t = tmp.path().join("t");
    assert_eq!(ala(&["train", "--config", &cfg, "--out", t.to_str().unwrap()]), 0);
    let policy = t.join("policy.json");
    let code = ala(&[
        "transfer",
        "--policy",
        policy.to_str().unwrap(),
        "--config",
        &cfg,
        "--history",
        "5",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}
