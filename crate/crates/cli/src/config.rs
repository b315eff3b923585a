//! Batch experiment configuration (JSON).
//!
//! ```json
//! {
//!   "dataset": {"csv": {"path": "german.csv", "schema": "german.schema.json"}},
//!   "model": {"logistic": {"l2": 0.001, "epochs": 2000}},
//!   "methods": ["upar", "growing_spheres", "wachter"],
//!   "preferences": {"random": {"candidates": [0.3, 0.6, 0.9]}},
//!   "sweep": {"tau": [1.0, 0.5, 0.25, 0.125]},
//!   "seeds": [0, 1],
//!   "max_individuals": 200,
//!   "out": "results"
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use upar_core::baselines::BaselineConfig;
use upar_core::data::QuantilePopulation;
use upar_core::preferences::PreferenceProfile;
use upar_core::{EngineConfig, Method};

use crate::error::{AppError, Result};
use crate::setup::{read_text, resolve, DatasetSpec, ModelSpec, Setup};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceSource {
    /// Uniform scores over continuous actionable features.
    #[default]
    Default,
    Fixed(PreferenceProfile),
    /// JSON lines, one profile per selected individual in order.
    PerIndividual {
        path: PathBuf,
    },
    /// Each continuous score drawn from `candidates`, then renormalized.
    Random {
        candidates: Vec<f64>,
        #[serde(default)]
        base: Option<PreferenceProfile>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default = "default_tau")]
    pub tau: Vec<f64>,
    #[serde(default = "default_multipliers")]
    pub step_multipliers: Vec<f64>,
    /// Number of leading actionable features kept actionable; all when absent.
    #[serde(default)]
    pub actionable_subset_sizes: Option<Vec<usize>>,
}

fn default_tau() -> Vec<f64> {
    vec![upar_core::preferences::DEFAULT_TAU]
}
fn default_multipliers() -> Vec<f64> {
    vec![1.0]
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            step_multipliers: default_multipliers(),
            actionable_subset_sizes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub population: QuantilePopulation,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub preferences: PreferenceSource,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Cap on the number of negatively classified rows used.
    #[serde(default)]
    pub max_individuals: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Upar]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// 1-based line of the first occurrence of `"key"` in `text`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
}

fn json_diagnostic(origin: &str, e: &serde_json::Error) -> String {
    let full = e.to_string();
    let message = full
        .rsplit_once(" at line ")
        .map_or(full.as_str(), |(m, _)| m);
    format!("{origin}:{}:{}: {message}", e.line(), e.column())
}

impl ExperimentConfig {
    pub fn setup(&self) -> Setup {
        Setup {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            population: self.population,
            engine: self.engine,
            baselines: self.baselines.clone(),
        }
    }

    /// Parses and validates; every problem is reported as
    /// `origin:line[:column]: message`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| AppError::Config(vec![json_diagnostic(origin, &e)]))?;
        let problems = cfg.problems(base);
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(AppError::Config(
                problems
                    .into_iter()
                    .map(|(key, msg)| match line_of(text, key) {
                        Some(line) => format!("{origin}:{line}: {msg}"),
                        None => format!("{origin}: {msg}"),
                    })
                    .collect(),
            ))
        }
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = read_text(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, &path.display().to_string(), &base)?;
        Ok((cfg, base))
    }

    /// (config key, message) for each problem found.
    pub fn problems(&self, base: &Path) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let setup = self.setup();
        for (key, p) in setup.referenced_files() {
            let full = resolve(base, p);
            if !full.is_file() {
                let short = key.rsplit('.').next().unwrap_or(key);
                out.push((short, format!("{key}: file not found: {}", full.display())));
            }
        }
        if let PreferenceSource::PerIndividual { path } = &self.preferences {
            let full = resolve(base, path);
            if !full.is_file() {
                out.push((
                    "per_individual",
                    format!(
                        "preferences.per_individual.path: file not found: {}",
                        full.display()
                    ),
                ));
            }
        }
        if let PreferenceSource::Random { candidates, .. } = &self.preferences {
            if candidates.is_empty() || candidates.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
                out.push((
                    "candidates",
                    "preferences.random.candidates must be non-empty scores in (0, 1]".into(),
                ));
            }
        }
        if self.sweep.tau.is_empty() {
            out.push(("tau", "sweep.tau must not be empty".into()));
        }
        if self.sweep.tau.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            out.push(("tau", "sweep.tau values must be positive".into()));
        }
        if self.sweep.step_multipliers.is_empty() {
            out.push((
                "step_multipliers",
                "sweep.step_multipliers must not be empty".into(),
            ));
        }
        if self
            .sweep
            .step_multipliers
            .iter()
            .any(|m| !(*m > 0.0 && m.is_finite()))
        {
            out.push((
                "step_multipliers",
                "sweep.step_multipliers must be positive".into(),
            ));
        }
        if let Some(sizes) = &self.sweep.actionable_subset_sizes {
            if sizes.is_empty() {
                out.push((
                    "actionable_subset_sizes",
                    "sweep.actionable_subset_sizes must not be empty".into(),
                ));
            }
            if sizes.contains(&0) {
                out.push((
                    "actionable_subset_sizes",
                    "sweep.actionable_subset_sizes must be at least 1".into(),
                ));
            }
        }
        if self.methods.is_empty() {
            out.push(("methods", "methods must not be empty".into()));
        }
        if self.seeds.is_empty() {
            out.push(("seeds", "seeds must not be empty".into()));
        }
        if self.max_individuals == Some(0) {
            out.push((
                "max_individuals",
                "max_individuals must be at least 1".into(),
            ));
        }
        if let Err(e) = self.engine.cost.validate() {
            out.push(("engine", format!("engine.cost: {e}")));
        }
        if let Err(e) = self.baselines.validate() {
            out.push(("baselines", format!("baselines: {e}")));
        }
        out
    }
}
