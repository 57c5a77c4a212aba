//! Small end-to-end project shared by the CLI and acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const TINY_SPEC: &str = r#"{
  "countries": 3,
  "start_year": 2008,
  "end_year": 2017,
  "k_s": 3,
  "dgp": {"type": "linear", "coefficients": [0.4, 0.2, 0.0], "ar_rho": 0.5, "noise_sigma": 1.0, "intercept": 5.0},
  "seed": 11,
  "samples": 3,
  "sample_noise": 1.0
}"#;

pub const TINY_CONFIG: &str = r#"
seed = 7
methods = ["chow_lin", "sp_td", "nn_elasticity", "corrupted_input"]

[data]
synthetic = "spec.json"

[train]
ensemble_size = 2
max_epochs = 30
patience = 10
hidden_sizes = [16, 8]

[explain]
models = ["AGT", "LagRD"]
background_per_country = 2
rows_per_country = 3
perturbation = { mean = 0.01, std = 0.005, n_draws = 8 }

[disagg]
chow_lin_topics = 2
"#;

/// Writes the synthetic spec and run config into `dir` and returns the config path.
pub fn write_tiny_project(dir: &Path) -> PathBuf {
    fs::write(dir.join("spec.json"), TINY_SPEC).unwrap();
    let cfg = dir.join("run.toml");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    cfg
}

pub const PIPELINE: [&str; 6] = ["ingest", "train", "evaluate", "explain", "disagg", "validate"];

/// Runs one subcommand in-process and returns the exit code.
pub fn run_cli(cfg: &Path, out: &Path, command: &str) -> i32 {
    raggededge::cli::main_with([
        "raggededge",
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

/// Every CSV under `dir`, keyed by relative path.
pub fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
