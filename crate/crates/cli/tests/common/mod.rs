#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_edgeprompt");

pub fn run_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("EDGEPROMPT_OUT_DIR").env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Runs and insists on success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "edgeprompt {args:?} failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn gen_csbm(dir: &Path, name: &str, n_per_class: usize, dim: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "gen-csbm",
        "--n-per-class",
        &n_per_class.to_string(),
        "--dim",
        &dim.to_string(),
        "--gap",
        "2.0",
        "--p",
        "0.5",
        "--q",
        "0.1",
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

pub fn pretrain(dataset: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["pretrain", "--dataset", s(dataset), "--out", s(out), "--hidden", "8", "--epochs", "3"];
    args.extend_from_slice(extra);
    ok(&args);
}

pub fn tune(dataset: &Path, checkpoint: &Path, out_dir: &Path, method: &str, extra: &[&str]) -> Value {
    let mut args = vec![
        "tune",
        "--dataset",
        s(dataset),
        "--checkpoint",
        s(checkpoint),
        "--method",
        method,
        "--shots",
        "3",
        "--epochs",
        "15",
        "--lr",
        "0.01",
        "--out-dir",
        s(out_dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    read_json(&out_dir.join("report.json"))
}

pub fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}
