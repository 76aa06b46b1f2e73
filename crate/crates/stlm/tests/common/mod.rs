#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const MINI_CONFIG: &str = r#"{
  "model": {"image_size": 16, "patch_size": 4, "student_dim": 8, "teacher_dim": 16, "encoder_depth": 1,
            "teacher_depth": 1, "heads": 2, "query_tokens": 2, "fa_channels": 4},
  "train": {"epochs": 2},
  "anomaly": {"perlin": {"base_period_range": [4, 8]}},
  "data": {"size": 16, "n_train": 4, "n_test_good": 3, "n_test_bad": 3,
           "perlin": {"base_period_range": [4, 8]}}
}"#;

pub fn stlm_in(dir: &Path, args: &[&str]) -> Output {
    stlm_env(dir, args, &[])
}

pub fn stlm_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stlm"));
    cmd.current_dir(dir).args(args).arg("--quiet").env_remove("STLM_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn stlm")
}

pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Scratch directory holding the miniature config as `mini.json`.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mini.json"), MINI_CONFIG).unwrap();
    dir
}

/// Every file under `root` with its SHA-256, skipping run manifests.
pub fn digests(root: &Path) -> Vec<(PathBuf, String)> {
    use sha2::{Digest, Sha256};
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let h = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = h.iter().map(|b| format!("{b:02x}")).collect();
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), hex));
            }
        }
    }
    out.sort();
    out
}
