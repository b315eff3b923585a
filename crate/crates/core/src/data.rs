//! Dataset schema, CSV ingestion, empirical percentile tables and a seeded
//! synthetic generator.
//!
//! Schemas are plain JSON documents:
//!
//! ```json
//! {
//!   "target": "approved",
//!   "positive_label": "1",
//!   "features": [
//!     { "name": "duration", "kind": "continuous", "actionable": true,
//!       "monotonicity": "free", "min": 4, "max": 72, "step": 1 },
//!     { "name": "guarantor", "kind": "categorical", "actionable": true,
//!       "values": [0, 1] }
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when matching a parsed cell against a categorical value.
const VALUE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Binary and small ordinal domains.
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    #[default]
    Free,
    NonDecreasing,
    NonIncreasing,
}

impl Monotonicity {
    /// Whether a move with the given sign is permitted.
    pub fn allows(self, direction: i8) -> bool {
        match self {
            Monotonicity::Free => true,
            Monotonicity::NonDecreasing => direction >= 0,
            Monotonicity::NonIncreasing => direction <= 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub actionable: bool,
    #[serde(default)]
    pub monotonicity: Monotonicity,
    #[serde(rename = "min", default, skip_serializing_if = "Option::is_none")]
    pub domain_min: Option<f64>,
    #[serde(rename = "max", default, skip_serializing_if = "Option::is_none")]
    pub domain_max: Option<f64>,
    #[serde(rename = "values", default, skip_serializing_if = "Vec::is_empty")]
    pub allowed_values: Vec<f64>,
    #[serde(rename = "step", default, skip_serializing_if = "Option::is_none")]
    pub default_step: Option<f64>,
}

impl FeatureSpec {
    pub fn continuous(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Continuous,
            actionable: true,
            monotonicity: Monotonicity::Free,
            domain_min: Some(min),
            domain_max: Some(max),
            allowed_values: Vec::new(),
            default_step: None,
        }
    }

    pub fn categorical(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            actionable: true,
            monotonicity: Monotonicity::Free,
            domain_min: None,
            domain_max: None,
            allowed_values: values.to_vec(),
            default_step: None,
        }
    }

    pub fn with_actionable(mut self, actionable: bool) -> Self {
        self.actionable = actionable;
        self
    }

    pub fn with_monotonicity(mut self, m: Monotonicity) -> Self {
        self.monotonicity = m;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.default_step = Some(step);
        self
    }

    pub fn is_continuous(&self) -> bool {
        self.kind == FeatureKind::Continuous
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }

    /// Lower end of the domain. For categorical features, the smallest allowed value.
    pub fn lower(&self) -> f64 {
        match self.kind {
            FeatureKind::Continuous => self.domain_min.unwrap_or(f64::NEG_INFINITY),
            FeatureKind::Categorical => self
                .allowed_values
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn upper(&self) -> f64 {
        match self.kind {
            FeatureKind::Continuous => self.domain_max.unwrap_or(f64::INFINITY),
            FeatureKind::Categorical => self
                .allowed_values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper() - self.lower()
    }

    /// Step size for continuous features; one hundredth of the domain when unset.
    pub fn step(&self) -> f64 {
        self.default_step.unwrap_or_else(|| self.width() / 100.0)
    }

    /// Position of the allowed value closest to `v`.
    pub fn nearest_value_index(&self, v: f64) -> Option<usize> {
        self.allowed_values
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
            .map(|(k, _)| k)
    }

    pub fn is_allowed_value(&self, v: f64) -> bool {
        self.allowed_values
            .iter()
            .any(|a| (a - v).abs() <= VALUE_EPS)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match self.kind {
            FeatureKind::Continuous => {
                let (Some(lo), Some(hi)) = (self.domain_min, self.domain_max) else {
                    return Err(format!(
                        "continuous feature `{}` needs min and max",
                        self.name
                    ));
                };
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(format!("feature `{}`: min must be < max", self.name));
                }
                let step = self.step();
                if !(step > 0.0 && step <= hi - lo) {
                    return Err(format!(
                        "feature `{}`: step must lie in (0, max - min]",
                        self.name
                    ));
                }
            }
            FeatureKind::Categorical => {
                if self.allowed_values.is_empty() {
                    return Err(format!("categorical feature `{}` has no values", self.name));
                }
                let mut seen = self.allowed_values.clone();
                seen.sort_by(f64::total_cmp);
                if seen.windows(2).any(|w| (w[1] - w[0]).abs() <= VALUE_EPS) {
                    return Err(format!("feature `{}` has duplicate values", self.name));
                }
                if seen.iter().any(|v| !v.is_finite()) {
                    return Err(format!("feature `{}` has non-finite values", self.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub features: Vec<FeatureSpec>,
    #[serde(rename = "target")]
    pub target_name: String,
    pub positive_label: String,
    /// Label written for the unfavorable class when exporting CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_label: Option<String>,
}

impl DatasetSchema {
    pub fn new(features: Vec<FeatureSpec>, target: &str, positive_label: &str) -> Result<Self> {
        let schema = Self {
            features,
            target_name: target.to_string(),
            positive_label: positive_label.to_string(),
            negative_label: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            f.validate().map_err(Error::Schema)?;
        }
        if names.contains(self.target_name.as_str()) {
            return Err(Error::Schema("target name collides with a feature".into()));
        }
        if !self.features.iter().any(|f| f.actionable) {
            return Err(Error::NoActionableFeatures);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn actionable(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.features[i].actionable)
            .collect()
    }

    /// Continuous actionable features (F_con).
    pub fn continuous_actionable(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.features[i].actionable && self.features[i].is_continuous())
            .collect()
    }

    /// Categorical actionable features (F_cat).
    pub fn categorical_actionable(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.features[i].actionable && self.features[i].is_categorical())
            .collect()
    }

    fn negative_label(&self) -> String {
        match &self.negative_label {
            Some(l) => l.clone(),
            None if self.positive_label == "0" => "1".into(),
            None => "0".into(),
        }
    }

    fn is_positive(&self, cell: &str) -> bool {
        let cell = cell.trim();
        if cell == self.positive_label {
            return true;
        }
        match (cell.parse::<f64>(), self.positive_label.parse::<f64>()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }
}

/// Rows in schema order with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
}

/// Rows dropped during ingestion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub rejected: usize,
    pub diagnostics: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Indices of rows labelled -1.
    pub fn negatives(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.labels[k] < 0).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self
            .schema
            .features
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        header.push(&self.schema.target_name);
        w.write_record(&header)?;
        let neg = self.schema.negative_label();
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(if label > 0 {
                self.schema.positive_label.clone()
            } else {
                neg.clone()
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Parses a headed CSV into schema order. Rows with unparseable cells or
/// categorical values outside the allowed set are dropped and counted; continuous
/// values are clipped into their domain.
pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<(Dataset, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let target_col = column(&schema.target_name)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut report = LoadReport::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match parse_row(&rec, schema, &feature_cols) {
            Ok(row) => {
                rows.push(row);
                let target = rec.get(target_col).unwrap_or("");
                labels.push(if schema.is_positive(target) { 1 } else { -1 });
            }
            Err(msg) => {
                report.rejected += 1;
                // header is line 1
                report.diagnostics.push(format!("line {}: {msg}", line + 2));
            }
        }
    }
    Ok((
        Dataset {
            schema: schema.clone(),
            rows,
            labels,
        },
        report,
    ))
}

fn parse_row(
    rec: &csv::StringRecord,
    schema: &DatasetSchema,
    cols: &[usize],
) -> std::result::Result<Vec<f64>, String> {
    schema
        .features
        .iter()
        .zip(cols)
        .map(|(f, &c)| {
            let cell = rec.get(c).unwrap_or("");
            let v: f64 = cell
                .parse()
                .map_err(|_| format!("cannot parse `{cell}` for `{}`", f.name))?;
            if !v.is_finite() {
                return Err(format!("non-finite value for `{}`", f.name));
            }
            match f.kind {
                FeatureKind::Continuous => Ok(v.clamp(f.lower(), f.upper())),
                FeatureKind::Categorical if f.is_allowed_value(v) => Ok(v),
                FeatureKind::Categorical => Err(format!("value {v} not allowed for `{}`", f.name)),
            }
        })
        .collect()
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<(Dataset, LoadReport)> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// Which rows the percentile functions are estimated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantilePopulation {
    #[default]
    All,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureQuantiles {
    Continuous {
        sorted: Vec<f64>,
    },
    /// `freq[k]` is the empirical frequency of `values[k]`.
    Categorical {
        values: Vec<f64>,
        freq: Vec<f64>,
    },
}

impl FeatureQuantiles {
    /// Midpoint-rule empirical CDF: (#below + 0.5 * #tied) / N.
    pub fn evaluate(&self, v: f64) -> f64 {
        match self {
            FeatureQuantiles::Continuous { sorted } => {
                let below = sorted.partition_point(|&s| s < v);
                let upto = sorted.partition_point(|&s| s <= v);
                (below as f64 + 0.5 * (upto - below) as f64) / sorted.len() as f64
            }
            FeatureQuantiles::Categorical { values, freq } => values
                .iter()
                .zip(freq)
                .map(|(&a, &p)| {
                    if (a - v).abs() <= VALUE_EPS {
                        0.5 * p
                    } else if a < v {
                        p
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }
}

/// Per-feature empirical percentile functions over a population.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub schema: DatasetSchema,
    pub features: Vec<FeatureQuantiles>,
    pub population: QuantilePopulation,
    /// Names of features whose sample is constant (percentile shift is flat).
    pub degenerate: Vec<String>,
}

impl QuantileTable {
    pub fn percentile(&self, feature: usize, v: f64) -> f64 {
        self.features[feature].evaluate(v)
    }
}

pub fn build_quantile_table(dataset: &Dataset) -> Result<QuantileTable> {
    build_quantile_table_with(dataset, QuantilePopulation::All)
}

pub fn build_quantile_table_with(
    dataset: &Dataset,
    population: QuantilePopulation,
) -> Result<QuantileTable> {
    let rows: Vec<&Vec<f64>> = match population {
        QuantilePopulation::All => dataset.rows.iter().collect(),
        QuantilePopulation::Positive => dataset
            .rows
            .iter()
            .zip(&dataset.labels)
            .filter(|(_, &l)| l > 0)
            .map(|(r, _)| r)
            .collect(),
    };
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "percentile tables need at least 2 rows, got {}",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mut features = Vec::with_capacity(dataset.schema.dim());
    let mut degenerate = Vec::new();
    for (i, spec) in dataset.schema.features.iter().enumerate() {
        let mut col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        col.sort_by(f64::total_cmp);
        if col.first() == col.last() {
            degenerate.push(spec.name.clone());
        }
        features.push(match spec.kind {
            FeatureKind::Continuous => FeatureQuantiles::Continuous { sorted: col },
            FeatureKind::Categorical => {
                let mut values = spec.allowed_values.clone();
                values.sort_by(f64::total_cmp);
                let freq = values
                    .iter()
                    .map(|&a| {
                        col.iter().filter(|&&v| (v - a).abs() <= VALUE_EPS).count() as f64 / n
                    })
                    .collect();
                FeatureQuantiles::Categorical { values, freq }
            }
        });
    }
    Ok(QuantileTable {
        schema: dataset.schema.clone(),
        features,
        population,
        degenerate,
    })
}

/// Scales every coordinate into [0, 1]: continuous features by their domain,
/// categorical features by position in `allowed_values`.
pub fn min_max_scale(x: &[f64], schema: &DatasetSchema) -> Vec<f64> {
    x.iter()
        .zip(&schema.features)
        .map(|(&v, f)| scale_value(v, f))
        .collect()
}

pub fn scale_value(v: f64, f: &FeatureSpec) -> f64 {
    match f.kind {
        FeatureKind::Continuous => {
            let w = f.width();
            if w > 0.0 {
                (v - f.lower()) / w
            } else {
                0.0
            }
        }
        FeatureKind::Categorical => {
            let n = f.allowed_values.len();
            if n < 2 {
                return 0.0;
            }
            let k = f.nearest_value_index(v).unwrap_or(0);
            k as f64 / (n - 1) as f64
        }
    }
}

/// Inverse of [`min_max_scale`]; scaled values are clipped to [0, 1] and
/// categorical coordinates snap to the nearest allowed value.
pub fn min_max_unscale(u: &[f64], schema: &DatasetSchema) -> Vec<f64> {
    u.iter()
        .zip(&schema.features)
        .map(|(&s, f)| {
            let s = s.clamp(0.0, 1.0);
            match f.kind {
                FeatureKind::Continuous => f.lower() + s * f.width(),
                FeatureKind::Categorical => {
                    let n = f.allowed_values.len();
                    let k = (s * (n.saturating_sub(1)) as f64).round() as usize;
                    f.allowed_values[k.min(n - 1)]
                }
            }
        })
        .collect()
}

/// Two-class data separated by a hidden hyperplane through the centre of the
/// scaled domain. Labels alternate so both classes are always present; each
/// continuous coordinate is then pushed `separation` (in scaled units, along
/// the hyperplane normal) away from the boundary and clipped to its domain.
///
/// The hidden weights respect each feature's monotonicity, so a favorable
/// move always exists along permitted directions.
pub fn generate_synthetic(
    seed: u64,
    n: usize,
    schema: &DatasetSchema,
    separation: f64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "synthetic data needs n >= 10, got {n}"
        )));
    }
    schema.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = schema
        .features
        .iter()
        .map(|f| {
            let magnitude = rng.random_range(0.5..1.5);
            let sign = match f.monotonicity {
                Monotonicity::NonDecreasing => 1.0,
                Monotonicity::NonIncreasing => -1.0,
                Monotonicity::Free => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            sign * magnitude
        })
        .collect();
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let y: i8 = if k % 2 == 0 { 1 } else { -1 };
        let mut u = loop {
            let u: Vec<f64> = schema
                .features
                .iter()
                .map(|f| match f.kind {
                    FeatureKind::Continuous => rng.random::<f64>(),
                    FeatureKind::Categorical => {
                        let m = f.allowed_values.len();
                        let j = rng.random_range(0..m);
                        if m > 1 {
                            j as f64 / (m - 1) as f64
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            let s: f64 = u.iter().zip(&weights).map(|(v, w)| w * (v - 0.5)).sum();
            if s * y as f64 > 0.0 {
                break u;
            }
        };
        for (j, f) in schema.features.iter().enumerate() {
            if f.is_continuous() {
                u[j] = (u[j] + y as f64 * separation * weights[j] / norm).clamp(0.0, 1.0);
            }
        }
        rows.push(min_max_unscale(&u, schema));
        labels.push(y);
    }
    Ok(Dataset {
        schema: schema.clone(),
        rows,
        labels,
    })
}
