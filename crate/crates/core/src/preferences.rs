//! User preferences: fractional-cost scores over continuous features, value
//! bounds and step sets, and a rank order over categorical features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, FeatureKind};
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_MAX_STEPS: usize = 1000;
const GAMMA_SUM_TOL: f64 = 1e-9;

/// Bounds on the reachable feature value x_i + r_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    /// Step size of a continuous feature.
    Size(f64),
    /// Ordered candidate values of a categorical feature.
    Values(Vec<f64>),
}

/// Which end of the ranking acts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    /// Rank 1 is tried first.
    #[default]
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceProfile {
    #[serde(default)]
    pub gamma: BTreeMap<String, f64>,
    #[serde(default)]
    pub bounds: BTreeMap<String, Bounds>,
    #[serde(default)]
    pub steps: BTreeMap<String, StepSpec>,
    #[serde(default)]
    pub ranking: BTreeMap<String, u32>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub rank_order: RankOrder,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Uniform scores, schema-domain bounds, schema steps, ranking in schema
/// order, tau = 1/4 and T = 1000.
pub fn default_profile(schema: &DatasetSchema) -> Result<PreferenceProfile> {
    let actionable = schema.actionable();
    if actionable.is_empty() {
        return Err(Error::NoActionableFeatures);
    }
    let con = schema.continuous_actionable();
    let share = 1.0 / con.len().max(1) as f64;
    let mut profile = PreferenceProfile {
        gamma: con
            .iter()
            .map(|&i| (schema.features[i].name.clone(), share))
            .collect(),
        bounds: BTreeMap::new(),
        steps: BTreeMap::new(),
        ranking: BTreeMap::new(),
        tau: DEFAULT_TAU,
        max_steps: DEFAULT_MAX_STEPS,
        rank_order: RankOrder::Ascending,
    };
    for &i in &actionable {
        let f = &schema.features[i];
        profile.bounds.insert(
            f.name.clone(),
            Bounds {
                lower: f.lower(),
                upper: f.upper(),
            },
        );
        profile.steps.insert(
            f.name.clone(),
            match f.kind {
                FeatureKind::Continuous => StepSpec::Size(f.step()),
                FeatureKind::Categorical => StepSpec::Values(f.allowed_values.clone()),
            },
        );
    }
    for (rank, &i) in schema.categorical_actionable().iter().enumerate() {
        profile
            .ranking
            .insert(schema.features[i].name.clone(), rank as u32 + 1);
    }
    Ok(profile)
}

/// Checks every profile invariant against the schema; an empty list means valid.
pub fn validate(profile: &PreferenceProfile, schema: &DatasetSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let feature = |name: &str| schema.index_of(name).map(|i| &schema.features[i]);

    let mut sum = 0.0;
    for (name, &g) in &profile.gamma {
        let field = format!("gamma.{name}");
        let Some(f) = feature(name) else {
            out.push(Violation::new(field, "unknown feature"));
            continue;
        };
        if !(0.0..=1.0).contains(&g) {
            out.push(Violation::new(&field, "score must lie in [0, 1]"));
        }
        if !f.actionable && g != 0.0 {
            out.push(Violation::new(
                &field,
                "must be 0 for a non-actionable feature",
            ));
        } else if f.is_categorical() && g != 0.0 {
            out.push(Violation::new(
                &field,
                "scores apply to continuous features only",
            ));
        } else if f.actionable && f.is_continuous() && g.is_finite() {
            sum += g;
        }
    }
    if !schema.continuous_actionable().is_empty() && (sum - 1.0).abs() > GAMMA_SUM_TOL {
        out.push(Violation::new(
            "gamma",
            format!("gamma sum ≠ 1 (got {sum})"),
        ));
    }

    for (name, b) in &profile.bounds {
        let field = format!("bounds.{name}");
        let Some(f) = feature(name) else {
            out.push(Violation::new(field, "unknown feature"));
            continue;
        };
        if !(b.lower.is_finite() && b.upper.is_finite()) {
            out.push(Violation::new(field, "bounds must be finite"));
        } else if b.lower > b.upper {
            out.push(Violation::new(field, "lower bound exceeds upper bound"));
        } else if b.lower.max(f.lower()) > b.upper.min(f.upper()) {
            out.push(Violation::new(
                field,
                "bounds do not intersect the feature domain",
            ));
        }
    }

    for (name, s) in &profile.steps {
        let field = format!("steps.{name}");
        let Some(f) = feature(name) else {
            out.push(Violation::new(field, "unknown feature"));
            continue;
        };
        match (f.kind, s) {
            (FeatureKind::Continuous, StepSpec::Size(v)) => {
                if !(v.is_finite() && *v > 0.0) {
                    out.push(Violation::new(field, "step size must be positive"));
                }
            }
            (FeatureKind::Categorical, StepSpec::Values(vals)) => {
                if vals.is_empty() {
                    out.push(Violation::new(&field, "candidate value set is empty"));
                }
                if vals.iter().any(|&v| !f.is_allowed_value(v)) {
                    out.push(Violation::new(
                        &field,
                        "candidate value outside allowed values",
                    ));
                }
                let distinct: BTreeSet<u64> = vals.iter().map(|v| v.to_bits()).collect();
                if distinct.len() != vals.len() {
                    out.push(Violation::new(&field, "duplicate candidate values"));
                }
            }
            (FeatureKind::Continuous, StepSpec::Values(_)) => out.push(Violation::new(
                field,
                "continuous features take a step size",
            )),
            (FeatureKind::Categorical, StepSpec::Size(_)) => out.push(Violation::new(
                field,
                "categorical features take a value list",
            )),
        }
    }

    let cat = schema.categorical_actionable();
    for (name, &rank) in &profile.ranking {
        let field = format!("ranking.{name}");
        match schema.index_of(name) {
            None => out.push(Violation::new(field, "unknown feature")),
            Some(i) if !cat.contains(&i) => out.push(Violation::new(
                field,
                "ranking applies to actionable categorical features only",
            )),
            Some(_) if rank == 0 => {
                out.push(Violation::new(field, "rank must be a positive integer"))
            }
            Some(_) => {}
        }
    }
    for &i in &cat {
        let name = &schema.features[i].name;
        if !profile.ranking.contains_key(name) {
            out.push(Violation::new(format!("ranking.{name}"), "ranking missing"));
        }
    }
    let ranks: BTreeSet<u32> = profile.ranking.values().copied().collect();
    if ranks.len() != profile.ranking.len() {
        out.push(Violation::new("ranking", "ranking not injective"));
    }

    if !(profile.tau.is_finite() && profile.tau > 0.0) {
        out.push(Violation::new("tau", "temperature must be positive"));
    }
    if profile.max_steps < 1 {
        out.push(Violation::new("max_steps", "at least one step is required"));
    }
    out
}

/// Divides scores by their sum. Zero scores stay zero.
pub fn renormalize_gamma(partial: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    if partial.values().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "scores must be finite and non-negative".into(),
        ));
    }
    let total: f64 = partial.values().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "at least one score must be positive".into(),
        ));
    }
    Ok(partial
        .iter()
        .map(|(k, v)| (k.clone(), v / total))
        .collect())
}

/// A validated profile laid out by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedProfile {
    /// Gamma per feature; 0 outside F_con.
    pub gamma: Vec<f64>,
    pub actionable: Vec<bool>,
    pub kinds: Vec<FeatureKind>,
    /// Value bounds intersected with the schema domain.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Continuous step sizes (0 for categorical features).
    pub step: Vec<f64>,
    /// Sorted candidate values for categorical features (empty otherwise).
    pub candidates: Vec<Vec<f64>>,
    /// Categorical actionable features in the order they may first act.
    pub rank_sequence: Vec<usize>,
    pub monotone: Vec<crate::data::Monotonicity>,
    pub tau: f64,
    pub max_steps: usize,
}

impl ResolvedProfile {
    pub fn resolve(profile: &PreferenceProfile, schema: &DatasetSchema) -> Result<Self> {
        let violations = validate(profile, schema);
        if !violations.is_empty() {
            return Err(Error::InvalidProfile(violations));
        }
        let d = schema.dim();
        let mut r = ResolvedProfile {
            gamma: vec![0.0; d],
            actionable: schema.features.iter().map(|f| f.actionable).collect(),
            kinds: schema.features.iter().map(|f| f.kind).collect(),
            lower: vec![0.0; d],
            upper: vec![0.0; d],
            step: vec![0.0; d],
            candidates: vec![Vec::new(); d],
            rank_sequence: Vec::new(),
            monotone: schema.features.iter().map(|f| f.monotonicity).collect(),
            tau: profile.tau,
            max_steps: profile.max_steps,
        };
        for (i, f) in schema.features.iter().enumerate() {
            let b = profile.bounds.get(&f.name);
            r.lower[i] = b.map_or(f.lower(), |b| b.lower.max(f.lower()));
            r.upper[i] = b.map_or(f.upper(), |b| b.upper.min(f.upper()));
            if !f.actionable {
                continue;
            }
            match f.kind {
                FeatureKind::Continuous => {
                    r.gamma[i] = profile.gamma.get(&f.name).copied().unwrap_or(0.0);
                    r.step[i] = match profile.steps.get(&f.name) {
                        Some(StepSpec::Size(s)) => *s,
                        _ => f.step(),
                    };
                }
                FeatureKind::Categorical => {
                    let mut vals = match profile.steps.get(&f.name) {
                        Some(StepSpec::Values(v)) => v.clone(),
                        _ => f.allowed_values.clone(),
                    };
                    vals.retain(|&v| v >= r.lower[i] - 1e-9 && v <= r.upper[i] + 1e-9);
                    vals.sort_by(f64::total_cmp);
                    r.candidates[i] = vals;
                }
            }
        }
        let mut ranked: Vec<(u32, usize)> = schema
            .categorical_actionable()
            .into_iter()
            .map(|i| (profile.ranking[&schema.features[i].name], i))
            .collect();
        ranked.sort();
        if profile.rank_order == RankOrder::Descending {
            ranked.reverse();
        }
        r.rank_sequence = ranked.into_iter().map(|(_, i)| i).collect();
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                FeatureSpec::continuous("duration", 4.0, 72.0),
                FeatureSpec::continuous("amount", 250.0, 18_500.0),
                FeatureSpec::categorical("guarantor", &[0.0, 1.0]),
                FeatureSpec::categorical("coapplicant", &[0.0, 1.0]),
                FeatureSpec::categorical("critical", &[0.0, 1.0]),
                FeatureSpec::continuous("age", 18.0, 80.0).with_actionable(false),
            ],
            "y",
            "1",
        )
        .unwrap()
    }

    fn with_gamma(pairs: &[(&str, f64)]) -> PreferenceProfile {
        let mut p = default_profile(&schema()).unwrap();
        p.gamma = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        p
    }

    #[test]
    fn defaults() {
        let p = default_profile(&schema()).unwrap();
        assert_eq!(p.gamma["duration"], 0.5);
        assert_eq!(p.gamma["amount"], 0.5);
        assert_eq!(p.ranking["guarantor"], 1);
        assert_eq!(p.ranking["coapplicant"], 2);
        assert_eq!(p.ranking["critical"], 3);
        assert_eq!(p.tau, 0.25);
        assert_eq!(p.max_steps, 1000);
        assert!(validate(&p, &schema()).is_empty());
    }

    #[test]
    fn paper_profile_is_valid() {
        let p = with_gamma(&[("duration", 0.8), ("amount", 0.2)]);
        assert!(validate(&p, &schema()).is_empty());
    }

    #[test]
    fn gamma_sum_violation() {
        let p = with_gamma(&[("duration", 0.8), ("amount", 0.3)]);
        let v = validate(&p, &schema());
        assert_eq!(v.len(), 1);
        assert!(v[0].message.starts_with("gamma sum ≠ 1"));
    }

    #[test]
    fn non_actionable_gamma_violation() {
        let p = with_gamma(&[("duration", 0.8), ("amount", 0.2), ("age", 0.1)]);
        assert!(validate(&p, &schema())
            .iter()
            .any(|v| v.field == "gamma.age"));
    }

    #[test]
    fn duplicate_ranks() {
        let mut p = default_profile(&schema()).unwrap();
        p.ranking.insert("guarantor".into(), 1);
        p.ranking.insert("coapplicant".into(), 1);
        let v = validate(&p, &schema());
        assert!(v.iter().any(|v| v.message == "ranking not injective"));
    }

    #[test]
    fn bounds_and_tau() {
        let mut p = default_profile(&schema()).unwrap();
        p.bounds.insert(
            "amount".into(),
            Bounds {
                lower: 5.0,
                upper: 1.0,
            },
        );
        p.bounds.insert(
            "duration".into(),
            Bounds {
                lower: 100.0,
                upper: 200.0,
            },
        );
        p.tau = 0.0;
        p.max_steps = 0;
        let fields: Vec<String> = validate(&p, &schema())
            .into_iter()
            .map(|v| v.field)
            .collect();
        assert!(fields.contains(&"bounds.amount".to_string()));
        assert!(fields.contains(&"bounds.duration".to_string()));
        assert!(fields.contains(&"tau".to_string()));
        assert!(fields.contains(&"max_steps".to_string()));
    }

    #[test]
    fn no_actionable_features() {
        let s = DatasetSchema {
            features: vec![FeatureSpec::continuous("a", 0.0, 1.0).with_actionable(false)],
            target_name: "y".into(),
            positive_label: "1".into(),
            negative_label: None,
        };
        assert!(matches!(
            default_profile(&s),
            Err(Error::NoActionableFeatures)
        ));
    }

    #[test]
    fn renormalize_examples() {
        let m = |pairs: &[(&str, f64)]| -> BTreeMap<String, f64> {
            pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
        };
        assert_eq!(
            renormalize_gamma(&m(&[("a", 4.0), ("b", 1.0)])).unwrap(),
            m(&[("a", 0.8), ("b", 0.2)])
        );
        assert_eq!(
            renormalize_gamma(&m(&[("a", 1.0), ("b", 0.0), ("c", 1.0)])).unwrap(),
            m(&[("a", 0.5), ("b", 0.0), ("c", 0.5)])
        );
        assert!(renormalize_gamma(&m(&[("a", 0.0), ("b", 0.0)])).is_err());
    }

    #[test]
    fn rank_order_switch() {
        let mut p = default_profile(&schema()).unwrap();
        p.ranking = [("coapplicant", 3), ("guarantor", 2), ("critical", 1)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let asc = ResolvedProfile::resolve(&p, &schema()).unwrap();
        assert_eq!(asc.rank_sequence, vec![4, 2, 3]);
        p.rank_order = RankOrder::Descending;
        let desc = ResolvedProfile::resolve(&p, &schema()).unwrap();
        assert_eq!(desc.rank_sequence, vec![3, 2, 4]);
    }

    #[test]
    fn profile_json_round_trip() {
        let p = with_gamma(&[("duration", 0.8), ("amount", 0.2)]);
        let text = serde_json::to_string(&p).unwrap();
        let back: PreferenceProfile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        let sparse: PreferenceProfile =
            serde_json::from_str(r#"{"gamma":{"duration":1.0}}"#).unwrap();
        assert_eq!(sparse.tau, DEFAULT_TAU);
        assert_eq!(sparse.max_steps, DEFAULT_MAX_STEPS);
    }
}
