#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqmtl::report::KvReport;

pub fn seqmtl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqmtl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to run seqmtl")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn read_kv(path: &Path) -> KvReport {
    KvReport::parse_text(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes the default generated corpus under `<dir>/data`.
pub fn synthetic_data(dir: &Path) -> PathBuf {
    let o = seqmtl(&["gen-synthetic", "--out", "data"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("data")
}

/// The single run directory under `out`.
pub fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run directory in {}", out.display());
    dirs.pop().unwrap()
}

/// Small model so command tests stay fast.
pub const SMALL: &[&str] = &[
    "--preset", "desk", "--epochs", "2",
    "--set", "model.hidden_dim=16", "--set", "model.ffn_dim=32", "--set", "model.num_heads=2", "--set", "model.num_layers=1",
];

pub fn args<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}
