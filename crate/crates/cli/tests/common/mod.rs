#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn tacfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacfit")).args(args).output().expect("failed to run tacfit")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn sample() -> (PathBuf, PathBuf) {
    let d = data_dir();
    (d.join("bt311_like_tac.csv"), d.join("bt311_like_brac.csv"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Schema violations of an estimate report.
pub fn schema_errors(report: &serde_json::Value) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    let schema = read_json(&path);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    validator.iter_errors(report).map(|e| e.to_string()).collect()
}

pub fn pair(v: &serde_json::Value) -> [f64; 2] {
    [v[0].as_f64().unwrap(), v[1].as_f64().unwrap()]
}

pub fn mat(v: &serde_json::Value) -> [[f64; 2]; 2] {
    [pair(&v[0]), pair(&v[1])]
}

pub fn is_psd(m: [[f64; 2]; 2]) -> bool {
    let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (m[0][1].abs() + 1e-300);
    sym && m[0][0] >= 0.0 && m[1][1] >= 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] >= 0.0
}
