#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_emg2artic"));
    cmd.env("EMG2ARTIC_LOG", "error");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn emg2artic")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "emg2artic {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus and tiny model so each command finishes in seconds.
pub fn small_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "config_version": 1,
        "synth": {
            "n_train": 6, "n_val": 2, "n_test": 2,
            "min_duration_s": 1.0, "max_duration_s": 1.5
        },
        "model": {
            "n_emg_channels": 8, "hidden_dim": 16, "n_resnet_blocks": 3,
            "n_transformer_layers": 1, "n_heads": 2
        },
        "train": { "batch_size": 2, "n_epochs": epochs, "eval_every": 1 }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Synthesizes and preprocesses a small corpus under `dir/corpus`.
pub fn small_corpus(dir: &Path, cfg: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    run_ok(&["synth", "--config", s(cfg), "--out", s(&corpus)]);
    run_ok(&["preprocess", "--config", s(cfg), "--corpus", s(&corpus)]);
    corpus
}

/// Every file under `root` with its bytes, skipping run manifests.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
