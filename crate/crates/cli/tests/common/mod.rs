#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_helioflux"));
    c.env("RUST_LOG", "warn");
    c
}

/// Runs the binary and returns its output, panicking with stderr on failure.
pub fn run_ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "helioflux {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small but complete pipeline configuration.
pub const SMALL_CONFIG: &str = r#"{
  "field": { "heliostats": 6 },
  "generate": {
    "train_samples": 8,
    "eval_samples_per_heliostat": 1,
    "observations_per_sample": 2,
    "rays_per_observation": 2000,
    "base_surfaces": 4
  },
  "model": { "embed_dim": 16, "mlp_dim": 32, "encoder_depth": 1, "fusion_depth": 1 },
  "train": { "epochs": 2, "batch_size": 4 },
  "evaluate": { "flux_rays": 2000 },
  "scenario": { "rays": 2000 }
}"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

/// gen-field, generate, train and evaluate into `dir`; returns the path of
/// every CSV written.
pub fn pipeline(dir: &Path, config: &Path, seed: u64) -> Vec<PathBuf> {
    let s = seed.to_string();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let c = config.to_str().unwrap();
    let common = ["--seed", s.as_str(), "--threads", "1", "--config", c];
    let with = |args: &[&str]| -> Vec<String> { common.iter().chain(args).map(|a| a.to_string()).collect() };
    run_ok(&with(&["gen-field", "--out", &p("field.json")]));
    run_ok(&with(&["generate", "--field", &p("field.json"), "--out", &p("data")]));
    run_ok(&with(&["train", "--dataset", &p("data"), "--out", &p("train")]));
    run_ok(&with(&[
        "evaluate",
        "--dataset",
        &p("data"),
        "--model",
        &p("train/model.hfck"),
        "--out",
        &p("eval"),
    ]));
    let mut csvs = vec![dir.join("train/history.csv")];
    for f in ["evaluation.csv", "baselines.csv", "summary.csv", "distance_trend.csv"] {
        csvs.push(dir.join("eval").join(f));
    }
    csvs
}
