//! Helpers shared by the CLI and acceptance test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmtmm"))
        .env("RUST_LOG", "warn")
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Small seeded two-trait dataset under `data/`.
pub fn small_data(dir: &Path) {
    let o = run(
        dir,
        &[
            "simulate", "--data-only", "--scenarios", "2", "--structure", "hom", "--families", "4", "--family-size", "10",
            "--genes", "30", "--beta0", "0.5", "--seed", "7", "--out-dir", "data",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

pub const FIT: &[&str] = &[
    "fit", "--pheno", "data/s2_hom_pheno.tsv", "--scores", "data/s2_hom_scores.tsv", "--kinship",
    "data/s2_hom_kinship.tsv", "--n-lambda", "30", "--ooi", "--ooi-reps", "3",
];

pub fn fit_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = FIT.to_vec();
    a.extend_from_slice(extra);
    a
}

/// Every file covered by a golden copy, produced from scratch in `dir`.
pub fn golden_outputs(dir: &Path) -> Vec<(&'static str, String)> {
    small_data(dir);
    let o = run(dir, &fit_args(&["--threads", "1", "--out", "g_fit.json", "--coef", "g_coef.tsv"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(
        dir,
        &[
            "predict", "--train", "data/s2_hom_pheno.tsv", "--scores", "data/s2_hom_scores.tsv", "--kinship",
            "data/s2_hom_kinship.tsv", "--n-lambda", "20", "--pred-folds", "4", "--threads", "1", "--report",
            "g_pred.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(dir, &simulate_smoke_args("g_sim", "1"));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    vec![
        ("fit_report.json", read(dir, "g_fit.json")),
        ("coefficients.tsv", read(dir, "g_coef.tsv")),
        ("prediction_report.json", read(dir, "g_pred.json")),
        ("pauc_table.tsv", read(dir, "g_sim/pauc_table.tsv")),
    ]
}

pub fn simulate_smoke_args<'a>(out: &'a str, threads: &'a str) -> Vec<&'a str> {
    vec![
        "simulate", "--scenarios", "1,2,3,4,5,6", "--structure", "both", "--reps", "2", "--families", "3",
        "--family-size", "10", "--genes", "40", "--n-lambda", "30", "--threads", threads, "--out-dir", out,
    ]
}
