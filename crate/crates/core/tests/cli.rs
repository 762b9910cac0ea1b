use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn patchprint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchprint")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = patchprint(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 6] = ["--image-size", "32", "--patch", "8", "--crops", "8"];

/// Tiny corpus plus a two-epoch classifier checkpoint.
fn tiny_setup(dir: &Path) -> (String, String) {
    let corpus = dir.join("corpus");
    ok(&["synth", "--out", p(&corpus), "--n", "4", "--size", "32", "--seed", "3"]);
    let manifest = corpus.join("manifest.jsonl");
    let ckpt = dir.join("ssp.ckpt");
    let log = dir.join("ssp.jsonl");
    let mut args = vec!["train-ssp", "--manifest", p(&manifest), "--out", p(&ckpt), "--epochs", "2", "--batch", "3"];
    args.extend(TINY);
    args.extend(["--log", p(&log)]);
    ok(&args);
    (p(&manifest).to_string(), p(&ckpt).to_string())
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(patchprint(&[]).status.code(), Some(2));
    assert_eq!(patchprint(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(patchprint(&["degrade", "--image", "x.png", "--out", "y.png"]).status.code(), Some(2));
    assert_eq!(patchprint(&["eval", "--ckpt", "a", "--manifest", "b", "--report", "r", "--jpeg", "0"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("none.jsonl");
    let out = patchprint(&["train-ssp", "--manifest", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let out = patchprint(&["score", "--ckpt", p(&junk), "--image", "x.png"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn degrade_blurs_and_rejects_negative_sigma() {
    let dir = TempDir::new().unwrap();
    ok(&["synth", "--out", p(dir.path()), "--n", "1", "--size", "24"]);
    let img = dir.path().join("real/00000.png");
    let out = dir.path().join("b.png");
    ok(&["degrade", "--image", p(&img), "--sigma", "1.5", "--out", p(&out)]);
    assert_ne!(fs::read(&img).unwrap(), fs::read(&out).unwrap());
    ok(&["degrade", "--image", p(&img), "--qf", "90", "--out", p(&out)]);
    assert_eq!(patchprint(&["degrade", "--image", p(&img), "--sigma=-1", "--out", p(&out)]).status.code(), Some(3));
}

#[test]
fn inspect_writes_patch_and_residual_planes() {
    let dir = TempDir::new().unwrap();
    ok(&["synth", "--out", p(dir.path()), "--n", "1", "--size", "64"]);
    let out = dir.path().join("inspect");
    let stdout = ok(&["inspect", "--image", p(&dir.path().join("fake/00000.png")), "--out", p(&out), "--image-size", "64", "--patch", "16"]);
    assert!(stdout.starts_with("patch origin row"));
    for f in ["patch.png", "residual_0.png", "residual_1.png", "residual_2.png"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn train_and_eval_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let (manifest, ckpt) = tiny_setup(dir.path());
    let again = dir.path().join("again.ckpt");
    let mut args = vec!["train-ssp", "--manifest", &manifest, "--out", p(&again), "--epochs", "2", "--batch", "3"];
    args.extend(TINY);
    ok(&args);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());
    let log = fs::read_to_string(dir.path().join("ssp.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let (r1, r2) = (dir.path().join("r1.json"), dir.path().join("r2.json"));
    let printed = ok(&["eval", "--ckpt", &ckpt, "--manifest", &manifest, "--split", "all", "--report", p(&r1)]);
    ok(&["eval", "--ckpt", &ckpt, "--manifest", &manifest, "--split", "all", "--report", p(&r2)]);
    let report = fs::read_to_string(&r1).unwrap();
    assert_eq!(report, fs::read_to_string(&r2).unwrap());
    assert_eq!(printed, report);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["n_real"], 4);
    assert!(v["acc"].as_f64().unwrap() >= 0.0);

    let score: f64 = ok(&["score", "--ckpt", &ckpt, "--image", p(&dir.path().join("corpus/real/00000.png"))]).trim().parse().unwrap();
    assert!(score > 0.0 && score < 1.0);
}

#[test]
fn essp_train_probe_and_eval() {
    let dir = TempDir::new().unwrap();
    let (manifest, ssp) = tiny_setup(dir.path());
    let essp = dir.path().join("essp.ckpt");
    let args = ["train-essp", "--manifest", &manifest, "--ssp", &ssp, "--out", p(&essp), "--epochs", "1", "--batch", "4"];
    let stdout = ok(&args);
    let line: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert!(line["reconstruction"].is_number() && line["perception"].is_number());
    let again = dir.path().join("again.ckpt");
    ok(&["train-essp", "--manifest", &manifest, "--ssp", &ssp, "--out", p(&again), "--epochs", "1", "--batch", "4"]);
    assert_eq!(fs::read(&essp).unwrap(), fs::read(&again).unwrap());

    let report = dir.path().join("probe.json");
    ok(&["probe", "--ckpt", p(&essp), "--manifest", &manifest, "--report", p(&report)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["patches"], 2);

    let r = dir.path().join("r.json");
    ok(&["eval", "--ckpt", p(&essp), "--manifest", &manifest, "--mode", "essp", "--blur", "1", "--report", p(&r)]);
    // a classifier-only checkpoint cannot run the enhanced pipeline
    let out = patchprint(&["eval", "--ckpt", &ssp, "--manifest", &manifest, "--mode", "essp", "--report", p(&r)]);
    assert_eq!(out.status.code(), Some(3));
}
