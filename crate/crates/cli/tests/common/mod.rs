#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn wctnas<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_wctnas"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Small, fast pipeline settings: two 16x16 synthetic images and pairs.
pub fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "image_size": [16, 16],
        "data": { "synthetic": { "train": 2, "pairs": 2, "seed": 3 } },
        "oracle_train": { "steps": 30 },
        "train": { "steps": 5 },
        "search": { "population": 3, "budget": 6, "tournament": 2, "workers": 1 },
        "random_draws": 4
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn path_arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
