mod common;

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;
use upar_cli::config::ExperimentConfig;
use upar_cli::experiment::{run, ResultRecord};

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn run_dir(dir: &tempfile::TempDir, out: &str) -> std::path::PathBuf {
    let (cfg, base) = ExperimentConfig::load(&common::config_path(dir)).unwrap();
    let out = dir.path().join(out);
    run(&cfg, &base, &out).unwrap();
    out
}

#[test]
fn tau_sweep_writes_one_row_per_point_with_falling_cost() {
    let dir = common::synthetic_dir(
        common::two_feature_schema(),
        400,
        json!({
            "sweep": {"tau": [1.0, 0.5, 0.25, 0.125]},
            "seeds": [0, 1],
            "max_individuals": 80
        }),
    );
    let out = run_dir(&dir, "out");
    let rows = read_csv(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    let taus: Vec<f64> = rows.iter().map(|r| r["tau"].parse().unwrap()).collect();
    assert_eq!(taus, vec![1.0, 0.5, 0.25, 0.125]);
    for r in &rows {
        assert_eq!(r["method"], "upar");
        assert_eq!(r["n"], "160");
        assert_eq!(r["con_vio"].parse::<f64>().unwrap(), 0.0);
    }

    let costs = read_csv(&out.join("plot_cost.csv"));
    assert_eq!(costs.len(), 4 * 160);
    let per_tau = |tau: f64| -> Vec<f64> {
        costs
            .iter()
            .filter(|r| r["tau"].parse::<f64>().unwrap() == tau && r["valid"] == "true")
            .map(|r| r["total_cost"].parse().unwrap())
            .collect()
    };
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };
    for pair in taus.windows(2) {
        let (m0, v0) = stats(&per_tau(pair[0]));
        let (m1, v1) = stats(&per_tau(pair[1]));
        let pooled = ((v0 + v1) / 2.0).sqrt();
        assert!(
            m1 <= m0 + pooled,
            "tau {} -> {}: {m0} -> {m1}",
            pair[0],
            pair[1]
        );
    }

    for r in &rows {
        let label = &r["point"];
        let point_rows = read_csv(&out.join("points").join(label).join("metrics.csv"));
        assert_eq!(point_rows.len(), 1);
        let text =
            std::fs::read_to_string(out.join("points").join(label).join("results.jsonl")).unwrap();
        let records: Vec<ResultRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(records.len(), 160);
        assert!(records.iter().all(|rec| &rec.point == label));
    }

    let hats = read_csv(&out.join("plot_gamma_hat.csv"));
    assert!(!hats.is_empty());
    assert!(hats
        .iter()
        .all(|r| r["feature"] == "a" || r["feature"] == "b"));
    assert!(out.join("model.json").is_file());
}

fn strip_column(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    std::iter::once(text.lines().next().unwrap().to_string())
        .chain(lines.map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, c)| c)
                .collect::<Vec<_>>()
                .join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reruns_are_byte_identical() {
    let dir = common::synthetic_dir(
        common::mixed_schema(),
        300,
        json!({
            "methods": ["upar", "growing_spheres", "wachter"],
            "preferences": {"random": {"candidates": [0.3, 0.6, 0.9]}},
            "sweep": {"tau": [0.5, 0.25]},
            "seeds": [4],
            "max_individuals": 30
        }),
    );
    let a = run_dir(&dir, "a");
    let b = run_dir(&dir, "b");
    for file in ["model.json", "plot_gamma_hat.csv", "plot_cost.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    for point in ["tau0.5_step1_kall", "tau0.25_step1_kall"] {
        let rel = Path::new("points").join(point).join("results.jsonl");
        assert_eq!(
            std::fs::read(a.join(&rel)).unwrap(),
            std::fs::read(b.join(&rel)).unwrap()
        );
    }
    let metrics = |d: &Path| {
        strip_column(
            &std::fs::read_to_string(d.join("metrics.csv")).unwrap(),
            "avg_time_s",
        )
    };
    assert_eq!(metrics(&a), metrics(&b));
    assert_eq!(read_csv(&a.join("metrics.csv")).len(), 6);
}

#[test]
fn subset_sweep_limits_moved_features() {
    let dir = common::synthetic_dir(
        common::mixed_schema(),
        300,
        json!({
            "sweep": {"actionable_subset_sizes": [1, 2, 4]},
            "max_individuals": 40
        }),
    );
    let out = run_dir(&dir, "out");
    let rows = read_csv(&out.join("metrics.csv"));
    let sizes: Vec<&str> = rows.iter().map(|r| r["subset_size"].as_str()).collect();
    assert_eq!(sizes, vec!["1", "2", "4"]);
    for r in &rows {
        assert!(r["avg_time_s"].parse::<f64>().unwrap() >= 0.0);
        let k: usize = r["subset_size"].parse().unwrap();
        let text =
            std::fs::read_to_string(out.join("points").join(&r["point"]).join("results.jsonl"))
                .unwrap();
        for line in text.lines() {
            let rec: ResultRecord = serde_json::from_str(line).unwrap();
            let moved: Vec<usize> = rec
                .result
                .final_action
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i)
                .collect();
            assert!(moved.iter().all(|&i| i < k), "k={k}: moved {moved:?}");
        }
    }
}

#[test]
fn per_individual_profiles_are_used_in_order() {
    let dir = common::synthetic_dir(
        common::two_feature_schema(),
        300,
        json!({
            "preferences": {"per_individual": {"path": "prefs.jsonl"}},
            "max_individuals": 3
        }),
    );
    let lines = [
        json!({"gamma": {"a": 0.9, "b": 0.1}}),
        json!({"gamma": {"a": 0.5, "b": 0.5}}),
        json!({"gamma": {"a": 0.1, "b": 0.9}}),
    ]
    .map(|v| v.to_string())
    .join("\n");
    std::fs::write(dir.path().join("prefs.jsonl"), lines).unwrap();
    let out = run_dir(&dir, "out");
    let text =
        std::fs::read_to_string(out.join("points/tau0.25_step1_kall/results.jsonl")).unwrap();
    let a: Vec<f64> = text
        .lines()
        .map(|l| serde_json::from_str::<ResultRecord>(l).unwrap().gamma["a"])
        .collect();
    assert_eq!(a, vec![0.9, 0.5, 0.1]);
}

#[test]
fn invalid_per_individual_profiles_name_their_line() {
    let dir = common::synthetic_dir(
        common::two_feature_schema(),
        300,
        json!({"preferences": {"per_individual": {"path": "prefs.jsonl"}}, "max_individuals": 2}),
    );
    std::fs::write(
        dir.path().join("prefs.jsonl"),
        "{\"gamma\": {\"a\": 0.5, \"b\": 0.5}}\n{\"tau\": -1}\n",
    )
    .unwrap();
    let (cfg, base) = ExperimentConfig::load(&common::config_path(&dir)).unwrap();
    let err = run(&cfg, &base, &dir.path().join("out"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("prefs.jsonl:2:"), "{err}");
}
