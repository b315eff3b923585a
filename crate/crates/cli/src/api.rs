//! Request and response bodies shared by the HTTP service and the
//! `recourse` subcommand.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use upar_core::baselines::{growing_spheres, wachter};
use upar_core::cost::feature_costs;
use upar_core::data::{DatasetSchema, FeatureKind, FeatureSpec, Monotonicity};
use upar_core::engine::{generate_recourse_traced, StepRecord};
use upar_core::metrics::{constraint_violations, proximity, redundancy, sparsity};
use upar_core::preferences::{PreferenceProfile, ResolvedProfile, Violation};
use upar_core::{Error, Method, RecourseResult};

use crate::setup::Loaded;

/// Feature values either in schema order or keyed by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceInput {
    Values(Vec<f64>),
    Named(BTreeMap<String, f64>),
}

impl InstanceInput {
    pub fn to_vector(&self, schema: &DatasetSchema) -> Result<Vec<f64>, Error> {
        let x = match self {
            InstanceInput::Values(v) => {
                if v.len() != schema.dim() {
                    return Err(Error::Dimension {
                        expected: schema.dim(),
                        got: v.len(),
                    });
                }
                v.clone()
            }
            InstanceInput::Named(m) => {
                if let Some(extra) = m.keys().find(|k| schema.index_of(k).is_none()) {
                    return Err(Error::InvalidInput(format!("unknown feature `{extra}`")));
                }
                schema
                    .features
                    .iter()
                    .map(|f| {
                        m.get(&f.name).copied().ok_or_else(|| {
                            Error::InvalidInput(format!("missing value for `{}`", f.name))
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        for (f, &v) in schema.features.iter().zip(&x) {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("`{}` is not finite", f.name)));
            }
            match f.kind {
                FeatureKind::Categorical if !f.is_allowed_value(v) => {
                    return Err(Error::InvalidInput(format!(
                        "`{}` = {v} is not one of {:?}",
                        f.name, f.allowed_values
                    )));
                }
                FeatureKind::Continuous if v < f.lower() || v > f.upper() => {
                    return Err(Error::InstanceOutOfBounds {
                        feature: f.name.clone(),
                        value: v,
                        lower: f.lower(),
                        upper: f.upper(),
                    });
                }
                _ => {}
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseRequest {
    pub instance: InstanceInput,
    /// Defaults to the schema's default profile.
    #[serde(default)]
    pub preferences: Option<PreferenceProfile>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub instance: InstanceInput,
    pub profiles: Vec<PreferenceProfile>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub preferences: PreferenceProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureView {
    pub name: String,
    pub kind: FeatureKind,
    pub actionable: bool,
    pub monotonicity: Monotonicity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    /// Default step for continuous features.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl From<&FeatureSpec> for FeatureView {
    fn from(f: &FeatureSpec) -> Self {
        let continuous = f.is_continuous();
        Self {
            name: f.name.clone(),
            kind: f.kind,
            actionable: f.actionable,
            monotonicity: f.monotonicity,
            min: continuous.then(|| f.lower()),
            max: continuous.then(|| f.upper()),
            values: f.allowed_values.clone(),
            step: continuous.then(|| f.step()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub target: String,
    pub positive_label: String,
    pub features: Vec<FeatureView>,
}

impl From<&DatasetSchema> for SchemaResponse {
    fn from(s: &DatasetSchema) -> Self {
        Self {
            target: s.target_name.clone(),
            positive_label: s.positive_label.clone(),
            features: s.features.iter().map(FeatureView::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMetrics {
    pub proximity: f64,
    pub sparsity: usize,
    pub redundancy: usize,
    pub constraint_violations: usize,
    pub total_cost: f64,
    pub total_cost_before_correction: f64,
    /// Shift cost per moved feature.
    pub feature_costs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseResponse {
    pub result: RecourseResult,
    /// Stage 1 steps; empty for the baselines.
    pub trace: Vec<StepRecord>,
    /// Requested cost shares.
    pub gamma: BTreeMap<String, f64>,
    /// Realized cost shares, when a continuous feature moved.
    pub gamma_hat: Option<BTreeMap<String, f64>>,
    pub metrics: ResponseMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub results: Vec<RecourseResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    /// Favorable-class probability, for already-positive instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    /// Position of the offending profile in a what-if request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_index: Option<usize>,
}

/// Runs one method on one instance and gathers everything the UI shows.
pub fn compute(
    loaded: &Loaded,
    x: &[f64],
    profile: &PreferenceProfile,
    method: Method,
    seed: u64,
) -> Result<RecourseResponse, Error> {
    let schema = &loaded.schema;
    let q = &loaded.quantiles;
    let resolved = ResolvedProfile::resolve(profile, schema)?;
    let (mut result, trace) = match method {
        Method::Upar => {
            let (r, t) =
                generate_recourse_traced(&loaded.model, x, profile, q, &loaded.engine, seed)?;
            (r, t.records)
        }
        Method::GrowingSpheres => (
            growing_spheres(&loaded.model, x, schema, &loaded.baselines.gs, seed)?,
            Vec::new(),
        ),
        Method::Wachter => (
            wachter(&loaded.model, x, schema, &loaded.baselines.wachter)?,
            Vec::new(),
        ),
    };
    if method != Method::Upar {
        result.seed = seed;
        result.attach_costs(q, &loaded.engine.cost);
    }
    let costs = feature_costs(q, x, &result.final_action, &loaded.engine.cost);
    let metrics = ResponseMetrics {
        proximity: proximity(x, &result.final_action, schema),
        sparsity: sparsity(&result.final_action),
        redundancy: redundancy(&loaded.model, x, &result.final_action)?,
        constraint_violations: constraint_violations(&result, schema),
        total_cost: result.total_cost_after,
        total_cost_before_correction: result.total_cost_before,
        feature_costs: schema
            .features
            .iter()
            .zip(&costs)
            .zip(&result.final_action)
            .filter(|(_, r)| **r != 0.0)
            .map(|((f, c), _)| (f.name.clone(), *c))
            .collect(),
    };
    let gamma = schema
        .continuous_actionable()
        .into_iter()
        .map(|i| (schema.features[i].name.clone(), resolved.gamma[i]))
        .collect();
    Ok(RecourseResponse {
        gamma_hat: result.fractional_costs.clone(),
        result,
        trace,
        gamma,
        metrics,
    })
}
