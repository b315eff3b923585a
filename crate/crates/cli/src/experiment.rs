//! Batch runs over a sweep grid.
//!
//! Output layout under the output directory:
//!
//! ```text
//! model.json               model used for every point
//! metrics.csv              one row per (point, method), all points
//! plot_gamma_hat.csv       long format: realized vs requested cost shares
//! plot_cost.csv            long format: cost and steps per individual
//! points/<label>/results.jsonl
//! points/<label>/metrics.csv
//! ```
//!
//! Everything except the `avg_time_s` column is a pure function of the
//! configuration and seeds.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use upar_core::baselines::{growing_spheres, wachter};
use upar_core::data::{build_quantile_table_with, Dataset, DatasetSchema};
use upar_core::engine::{generate_recourse, individual_seed};
use upar_core::metrics::{Evaluated, MetricsReport};
use upar_core::preferences::{
    default_profile, renormalize_gamma, validate, PreferenceProfile, StepSpec,
};
use upar_core::{Method, QuantileTable, RecourseResult};

use crate::config::{ExperimentConfig, PreferenceSource};
use crate::error::{AppError, Result};
use crate::setup::{read_text, resolve, Loaded};

const PREFERENCE_STREAM: u64 = 0x5052_4546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub step_multiplier: f64,
    pub subset_size: Option<usize>,
}

impl SweepPoint {
    /// Directory-safe name, e.g. `tau0.25_step1_kall`.
    pub fn label(&self) -> String {
        let k = self
            .subset_size
            .map_or_else(|| "all".to_string(), |k| k.to_string());
        format!("tau{}_step{}_k{k}", self.tau, self.step_multiplier)
    }
}

pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let sizes: Vec<Option<usize>> = match &cfg.sweep.actionable_subset_sizes {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut out = Vec::new();
    for &k in &sizes {
        for &m in &cfg.sweep.step_multipliers {
            for &tau in &cfg.sweep.tau {
                out.push(SweepPoint {
                    tau,
                    step_multiplier: m,
                    subset_size: k,
                });
            }
        }
    }
    out
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub point: String,
    pub method: Method,
    pub seed: u64,
    /// Row index in the dataset.
    pub row: usize,
    pub gamma: BTreeMap<String, f64>,
    pub result: RecourseResult,
}

#[derive(Debug, Clone)]
pub struct PointSummary {
    pub point: SweepPoint,
    pub reports: Vec<(Method, MetricsReport)>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub individuals: usize,
    pub points: Vec<PointSummary>,
}

/// Keeps the first `k` actionable features (schema order) actionable.
pub fn restrict_actionable(schema: &DatasetSchema, k: Option<usize>) -> Result<DatasetSchema> {
    let Some(k) = k else {
        return Ok(schema.clone());
    };
    let actionable = schema.actionable();
    if k > actionable.len() {
        return Err(AppError::Config(vec![format!(
            "actionable subset size {k} exceeds the {} actionable features",
            actionable.len()
        )]));
    }
    let mut s = schema.clone();
    for &i in &actionable[k..] {
        s.features[i].actionable = false;
    }
    Ok(s)
}

/// Fits a profile to a (possibly restricted) schema and a sweep point:
/// drops entries for features that are no longer actionable, renormalizes
/// the scores, completes the ranking and applies tau and the step multiplier.
pub fn adapt_profile(
    profile: &PreferenceProfile,
    schema: &DatasetSchema,
    point: &SweepPoint,
) -> Result<PreferenceProfile> {
    let defaults = default_profile(schema)?;
    let actionable = |name: &str| {
        schema
            .index_of(name)
            .is_some_and(|i| schema.features[i].actionable)
    };
    let mut p = profile.clone();

    let con: Vec<String> = schema
        .continuous_actionable()
        .into_iter()
        .map(|i| schema.features[i].name.clone())
        .collect();
    let kept: BTreeMap<String, f64> = p
        .gamma
        .iter()
        .filter(|(k, v)| con.contains(k) && **v > 0.0)
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    p.gamma = if kept.is_empty() {
        defaults.gamma.clone()
    } else {
        let mut full = renormalize_gamma(&kept)?;
        for name in &con {
            full.entry(name.clone()).or_insert(0.0);
        }
        full
    };

    p.bounds.retain(|k, _| actionable(k));
    p.steps.retain(|k, _| actionable(k));
    for (name, step) in &defaults.steps {
        p.steps.entry(name.clone()).or_insert_with(|| step.clone());
    }
    for step in p.steps.values_mut() {
        if let StepSpec::Size(s) = step {
            *s *= point.step_multiplier;
        }
    }

    p.ranking.retain(|k, _| defaults.ranking.contains_key(k));
    let mut next = p.ranking.values().copied().max().unwrap_or(0);
    for i in schema.categorical_actionable() {
        let name = &schema.features[i].name;
        if !p.ranking.contains_key(name) {
            next += 1;
            p.ranking.insert(name.clone(), next);
        }
    }
    p.tau = point.tau;
    Ok(p)
}

/// Per-individual profiles before adaptation, indexed like `rows`.
fn source_profiles(
    cfg: &ExperimentConfig,
    base: &Path,
    schema: &DatasetSchema,
    rows: &[usize],
) -> Result<Vec<PreferenceProfile>> {
    match &cfg.preferences {
        PreferenceSource::Default => Ok(vec![default_profile(schema)?; rows.len()]),
        PreferenceSource::Fixed(p) => {
            let v = validate(p, schema);
            if !v.is_empty() {
                return Err(AppError::Config(
                    v.iter().map(|v| format!("preferences.fixed.{v}")).collect(),
                ));
            }
            Ok(vec![p.clone(); rows.len()])
        }
        PreferenceSource::PerIndividual { path } => {
            let full = resolve(base, path);
            let text = read_text(&full)?;
            let origin = full.display().to_string();
            let mut out = Vec::new();
            let mut problems = Vec::new();
            for (n, line) in text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                match serde_json::from_str::<PreferenceProfile>(line) {
                    Ok(p) => {
                        for v in validate(&p, schema) {
                            problems.push(format!("{origin}:{}: {v}", n + 1));
                        }
                        out.push(p);
                    }
                    Err(e) => problems.push(format!("{origin}:{}:{}: {e}", n + 1, e.column())),
                }
            }
            if out.len() < rows.len() && problems.is_empty() {
                problems.push(format!(
                    "{origin}: {} profiles for {} individuals",
                    out.len(),
                    rows.len()
                ));
            }
            if !problems.is_empty() {
                return Err(AppError::Config(problems));
            }
            out.truncate(rows.len());
            Ok(out)
        }
        PreferenceSource::Random {
            candidates,
            base: template,
        } => {
            let template = match template {
                Some(p) => p.clone(),
                None => default_profile(schema)?,
            };
            let con = schema.continuous_actionable();
            let seed = cfg.seeds[0];
            rows.iter()
                .map(|&row| {
                    let mut rng = ChaCha8Rng::seed_from_u64(individual_seed(
                        seed ^ PREFERENCE_STREAM,
                        row as u64,
                    ));
                    let raw: BTreeMap<String, f64> = con
                        .iter()
                        .map(|&i| {
                            (
                                schema.features[i].name.clone(),
                                *candidates.choose(&mut rng).expect("validated"),
                            )
                        })
                        .collect();
                    let mut p = template.clone();
                    p.gamma = if raw.is_empty() {
                        raw
                    } else {
                        renormalize_gamma(&raw)?
                    };
                    Ok(p)
                })
                .collect()
        }
    }
}

fn run_one(
    loaded: &Loaded,
    q: &QuantileTable,
    schema: &DatasetSchema,
    method: Method,
    x: &[f64],
    profile: &PreferenceProfile,
    seed: u64,
) -> Result<RecourseResult> {
    let mut r = match method {
        Method::Upar => generate_recourse(&loaded.model, x, profile, q, &loaded.engine, seed)?,
        Method::GrowingSpheres => {
            growing_spheres(&loaded.model, x, schema, &loaded.baselines.gs, seed)?
        }
        Method::Wachter => wachter(&loaded.model, x, schema, &loaded.baselines.wachter)?,
    };
    if method != Method::Upar {
        r.seed = seed;
        r.attach_costs(q, &loaded.engine.cost);
    }
    Ok(r)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(AppError::from)
}

const POINT_COLUMNS: [&str; 5] = ["point", "method", "tau", "step_multiplier", "subset_size"];
const EXTRA_COLUMNS: [&str; 3] = ["n", "n_valid", "mean_cost"];

fn metrics_header() -> Vec<&'static str> {
    let mut h = POINT_COLUMNS.to_vec();
    h.extend(MetricsReport::CSV_COLUMNS);
    h.extend(EXTRA_COLUMNS);
    h
}

fn metrics_row(point: &SweepPoint, method: Method, r: &MetricsReport) -> Vec<String> {
    let mut row = vec![
        point.label(),
        method.to_string(),
        point.tau.to_string(),
        point.step_multiplier.to_string(),
        point
            .subset_size
            .map_or_else(|| "all".into(), |k| k.to_string()),
    ];
    row.extend(r.csv_values());
    row.extend([
        r.n.to_string(),
        r.n_valid.to_string(),
        r.mean_cost.to_string(),
    ]);
    row
}

/// Runs the full grid and writes all outputs to `out`.
pub fn run(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<RunSummary> {
    let loaded = cfg.setup().load(base)?;
    let mut rows = loaded.negatives()?;
    if let Some(cap) = cfg.max_individuals {
        rows.truncate(cap);
    }
    if rows.is_empty() {
        return Err(upar_core::Error::Empty("no negatively classified rows".into()).into());
    }
    let profiles = source_profiles(cfg, base, &loaded.schema, &rows)?;

    fs::create_dir_all(out.join("points")).map_err(|e| AppError::io(out, e))?;
    loaded.model.save(out.join("model.json"))?;

    let mut all_metrics = csv_writer(&out.join("metrics.csv"))?;
    all_metrics.write_record(metrics_header())?;
    let mut gamma_plot = csv_writer(&out.join("plot_gamma_hat.csv"))?;
    gamma_plot.write_record([
        "point",
        "method",
        "seed",
        "row",
        "feature",
        "gamma",
        "gamma_hat",
    ])?;
    let mut cost_plot = csv_writer(&out.join("plot_cost.csv"))?;
    cost_plot.write_record([
        "point",
        "method",
        "tau",
        "step_multiplier",
        "subset_size",
        "seed",
        "row",
        "valid",
        "total_cost",
        "steps",
    ])?;

    let mut summaries = Vec::new();
    for point in sweep_points(cfg) {
        let schema = restrict_actionable(&loaded.schema, point.subset_size)?;
        let q = build_quantile_table_with(
            &Dataset {
                schema: schema.clone(),
                ..loaded.data.clone()
            },
            loaded.quantiles.population,
        )?;
        let adapted = profiles
            .iter()
            .map(|p| adapt_profile(p, &schema, &point))
            .collect::<Result<Vec<_>>>()?;

        let label = point.label();
        let dir = out.join("points").join(&label);
        fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        let results_path = dir.join("results.jsonl");
        let mut results_file = BufWriter::new(
            File::create(&results_path).map_err(|e| AppError::io(&results_path, e))?,
        );
        let mut point_metrics = csv_writer(&dir.join("metrics.csv"))?;
        point_metrics.write_record(metrics_header())?;

        let mut reports = Vec::new();
        for &method in &cfg.methods {
            let mut evaluated = Vec::new();
            for &seed in &cfg.seeds {
                let batch: Vec<RecourseResult> = rows
                    .par_iter()
                    .zip(adapted.par_iter())
                    .map(|(&row, profile)| {
                        let x = &loaded.data.rows[row];
                        run_one(
                            &loaded,
                            &q,
                            &schema,
                            method,
                            x,
                            profile,
                            individual_seed(seed, row as u64),
                        )
                    })
                    .collect::<Result<_>>()?;
                for ((&row, profile), result) in rows.iter().zip(&adapted).zip(batch) {
                    let record = ResultRecord {
                        point: label.clone(),
                        method,
                        seed,
                        row,
                        gamma: profile.gamma.clone(),
                        result,
                    };
                    serde_json::to_writer(&mut results_file, &record)?;
                    results_file
                        .write_all(b"\n")
                        .map_err(|e| AppError::io(&results_path, e))?;
                    if let (true, Some(hat)) =
                        (record.result.valid, &record.result.fractional_costs)
                    {
                        for (feature, g) in &record.gamma {
                            gamma_plot.write_record([
                                label.clone(),
                                method.to_string(),
                                seed.to_string(),
                                row.to_string(),
                                feature.clone(),
                                g.to_string(),
                                hat.get(feature).copied().unwrap_or(0.0).to_string(),
                            ])?;
                        }
                    }
                    cost_plot.write_record([
                        label.clone(),
                        method.to_string(),
                        point.tau.to_string(),
                        point.step_multiplier.to_string(),
                        point
                            .subset_size
                            .map_or_else(|| "all".into(), |k| k.to_string()),
                        seed.to_string(),
                        row.to_string(),
                        record.result.valid.to_string(),
                        record.result.total_cost_after.to_string(),
                        record
                            .result
                            .steps_used
                            .map_or_else(String::new, |s| s.to_string()),
                    ])?;
                    evaluated.push(Evaluated {
                        result: record.result,
                        gamma: record.gamma,
                        group: None,
                    });
                }
            }
            let report = MetricsReport::compute(&loaded.model, &schema, &evaluated)?;
            point_metrics.write_record(metrics_row(&point, method, &report))?;
            all_metrics.write_record(metrics_row(&point, method, &report))?;
            reports.push((method, report));
        }
        results_file
            .flush()
            .map_err(|e| AppError::io(&results_path, e))?;
        point_metrics.flush().map_err(|e| AppError::io(&dir, e))?;
        summaries.push(PointSummary { point, reports });
    }
    for w in [&mut all_metrics, &mut gamma_plot, &mut cost_plot] {
        w.flush().map_err(|e| AppError::io(out, e))?;
    }
    Ok(RunSummary {
        out: out.to_path_buf(),
        individuals: rows.len(),
        points: summaries,
    })
}
