#![allow(dead_code)]

use std::path::PathBuf;

use clamc::model::{parse_model, SrnModel};

pub fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models").join(name)
}

pub fn load(name: &str) -> SrnModel {
    let text = std::fs::read_to_string(model_path(name)).expect("bundled model");
    parse_model(&text).expect("bundled model parses")
}

pub fn gene() -> SrnModel {
    load("gene_expression.srn")
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub mod brute;
pub mod lemma;
