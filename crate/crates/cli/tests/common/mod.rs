#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use upar_cli::config::ExperimentConfig;
use upar_cli::setup::Loaded;
use upar_core::model::{LinearModel, Model};

pub fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// One feature `a` in [-1, 1] with step 0.1, 21 evenly spaced rows and a
/// saved model with weight 1 and bias 0.
pub fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_json(
        &p.join("schema.json"),
        &json!({
            "target": "y",
            "positive_label": "1",
            "features": [
                {"name": "a", "kind": "continuous", "actionable": true, "min": -1.0, "max": 1.0, "step": 0.1}
            ]
        }),
    );
    let mut csv = String::from("a,y\n");
    for k in 0..=20 {
        let a = -1.0 + 0.1 * k as f64;
        csv.push_str(&format!("{a},{}\n", u8::from(a >= 0.0)));
    }
    std::fs::write(p.join("data.csv"), csv).unwrap();
    Model::Linear(LinearModel::new(vec![1.0], 0.0))
        .save(p.join("model.json"))
        .unwrap();
    write_json(
        &p.join("config.json"),
        &json!({
            "dataset": {"csv": {"path": "data.csv", "schema": "schema.json"}},
            "model": {"load": {"path": "model.json"}}
        }),
    );
    dir
}

/// Two continuous features `a`, `b` in [0, 100].
pub fn two_feature_schema() -> Value {
    json!({
        "target": "y",
        "positive_label": "1",
        "features": [
            {"name": "a", "kind": "continuous", "actionable": true, "min": 0.0, "max": 100.0},
            {"name": "b", "kind": "continuous", "actionable": true, "min": 0.0, "max": 100.0}
        ]
    })
}

/// Loan-like mix of continuous, categorical and immutable features.
pub fn mixed_schema() -> Value {
    json!({
        "target": "approved",
        "positive_label": "1",
        "features": [
            {"name": "duration", "kind": "continuous", "actionable": true, "min": 0.0, "max": 72.0},
            {"name": "amount", "kind": "continuous", "actionable": true, "min": 0.0, "max": 20000.0},
            {"name": "savings", "kind": "continuous", "actionable": true, "min": 0.0, "max": 5000.0},
            {"name": "guarantor", "kind": "categorical", "actionable": true, "values": [0.0, 1.0, 2.0]},
            {"name": "age", "kind": "continuous", "actionable": false, "min": 18.0, "max": 80.0}
        ]
    })
}

/// Writes `schema.json` and `config.json` for a synthetic dataset; `extra`
/// keys are merged into the config.
pub fn synthetic_dir(schema: Value, n: usize, extra: Value) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("schema.json"), &schema);
    let mut cfg = json!({
        "dataset": {"synthetic": {"schema": "schema.json", "n": n, "seed": 7, "separation": 0.15}},
        "model": {"logistic": {"seed": 7}}
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    write_json(&dir.path().join("config.json"), &cfg);
    dir
}

pub fn config_path(dir: &tempfile::TempDir) -> PathBuf {
    dir.path().join("config.json")
}

pub fn load(dir: &tempfile::TempDir) -> (ExperimentConfig, Loaded) {
    let (cfg, base) = ExperimentConfig::load(&config_path(dir)).unwrap();
    let loaded = cfg.setup().load(&base).unwrap();
    (cfg, loaded)
}
