//! Evaluation metrics over batches of recourse results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{min_max_scale, DatasetSchema};
use crate::engine::{RecourseResult, Trajectory};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::preferences::ResolvedProfile;

/// Fraction of attempts that produced a valid recourse.
pub fn success_rate(results: &[RecourseResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("no results".into()));
    }
    Ok(results.iter().filter(|r| r.valid).count() as f64 / results.len() as f64)
}

/// Number of non-actionable features the action changes.
pub fn constraint_violations(result: &RecourseResult, schema: &DatasetSchema) -> usize {
    result
        .final_action
        .iter()
        .zip(&schema.features)
        .filter(|(r, f)| !f.actionable && **r != 0.0)
        .count()
}

/// Number of moved features whose individual reversion keeps the favorable label.
pub fn redundancy<P: Predictor + ?Sized>(model: &P, x: &[f64], r: &[f64]) -> Result<usize> {
    let point: Vec<f64> = x.iter().zip(r).map(|(a, b)| a + b).collect();
    let mut count = 0;
    for i in 0..r.len() {
        if r[i] == 0.0 {
            continue;
        }
        let mut reverted = point.clone();
        reverted[i] = x[i];
        if model.predict_label(&reverted)? == 1 {
            count += 1;
        }
    }
    Ok(count)
}

/// l2 distance between the scaled instance and the scaled counterfactual.
pub fn proximity(x: &[f64], r: &[f64], schema: &DatasetSchema) -> f64 {
    let point: Vec<f64> = x.iter().zip(r).map(|(a, b)| a + b).collect();
    let a = min_max_scale(x, schema);
    let b = min_max_scale(&point, schema);
    a.iter()
        .zip(&b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

pub fn sparsity(r: &[f64]) -> usize {
    r.iter().filter(|v| **v != 0.0).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prmse {
    pub value: f64,
    pub per_feature: BTreeMap<String, f64>,
    /// Individuals without a defined fractional cost.
    pub excluded: usize,
}

/// Realized fractional costs (if defined) paired with the requested scores.
pub type ShareEntry<'a> = (Option<&'a BTreeMap<String, f64>>, &'a BTreeMap<String, f64>);

/// Root mean squared gap between requested and realized fractional costs,
/// per feature and averaged over features.
pub fn prmse(entries: &[ShareEntry<'_>]) -> Result<Prmse> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut excluded = 0;
    for (hat, gamma) in entries {
        let Some(hat) = hat else {
            excluded += 1;
            continue;
        };
        for (name, g) in gamma.iter() {
            let h = hat.get(name).copied().unwrap_or(0.0);
            let e = sums.entry(name.clone()).or_insert((0.0, 0));
            e.0 += (h - g) * (h - g);
            e.1 += 1;
        }
    }
    if sums.is_empty() {
        return Err(Error::Empty(format!(
            "all {excluded} individuals lack a fractional cost"
        )));
    }
    let per_feature: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(k, (s, n))| (k, (s / n as f64).sqrt()))
        .collect();
    let value = per_feature.values().sum::<f64>() / per_feature.len() as f64;
    Ok(Prmse {
        value,
        per_feature,
        excluded,
    })
}

/// One recourse together with the scores the individual asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluated {
    pub result: RecourseResult,
    pub gamma: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub n_valid: usize,
    pub success_rate: f64,
    pub avg_time_s: f64,
    pub con_vio: f64,
    pub redundancy: f64,
    pub proximity: f64,
    pub sparsity: f64,
    pub mean_cost: f64,
    pub prmse: Option<f64>,
    pub prmse_per_feature: BTreeMap<String, f64>,
    pub prmse_excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, MetricsReport>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl MetricsReport {
    pub const CSV_COLUMNS: [&'static str; 7] = [
        "success_rate",
        "prmse",
        "avg_time_s",
        "con_vio",
        "redundancy",
        "proximity",
        "sparsity",
    ];

    /// Means are over valid results; success rate is over all attempts.
    pub fn compute<P: Predictor + ?Sized>(
        model: &P,
        schema: &DatasetSchema,
        items: &[Evaluated],
    ) -> Result<Self> {
        let results: Vec<RecourseResult> = items.iter().map(|e| e.result.clone()).collect();
        let success = success_rate(&results)?;
        let valid: Vec<&Evaluated> = items.iter().filter(|e| e.result.valid).collect();
        let redundancies = valid
            .iter()
            .map(|e| {
                redundancy(model, &e.result.instance, &e.result.final_action).map(|v| v as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        let entries: Vec<_> = valid
            .iter()
            .map(|e| (e.result.fractional_costs.as_ref(), &e.gamma))
            .collect();
        let p = if entries.is_empty() {
            None
        } else {
            prmse(&entries).ok()
        };
        Ok(Self {
            n: items.len(),
            n_valid: valid.len(),
            success_rate: success,
            avg_time_s: mean(valid.iter().map(|e| e.result.wall_time)),
            con_vio: mean(
                valid
                    .iter()
                    .map(|e| constraint_violations(&e.result, schema) as f64),
            ),
            redundancy: mean(redundancies.into_iter()),
            proximity: mean(
                valid
                    .iter()
                    .map(|e| proximity(&e.result.instance, &e.result.final_action, schema)),
            ),
            sparsity: mean(
                valid
                    .iter()
                    .map(|e| sparsity(&e.result.final_action) as f64),
            ),
            mean_cost: mean(valid.iter().map(|e| e.result.total_cost_after)),
            prmse: p.as_ref().map(|p| p.value),
            prmse_per_feature: p
                .as_ref()
                .map(|p| p.per_feature.clone())
                .unwrap_or_default(),
            prmse_excluded: p.map_or(
                valid
                    .iter()
                    .filter(|e| e.result.fractional_costs.is_none())
                    .count(),
                |p| p.excluded,
            ),
            groups: None,
        })
    }

    /// Values in [`Self::CSV_COLUMNS`] order.
    pub fn csv_values(&self) -> Vec<String> {
        [
            self.success_rate,
            self.prmse.unwrap_or(f64::NAN),
            self.avg_time_s,
            self.con_vio,
            self.redundancy,
            self.proximity,
            self.sparsity,
        ]
        .iter()
        .map(|v| v.to_string())
        .collect()
    }
}

/// Independent sub-reports per group key; ungrouped items land in "".
pub fn grouped<P: Predictor + ?Sized>(
    model: &P,
    schema: &DatasetSchema,
    items: &[Evaluated],
) -> Result<BTreeMap<String, MetricsReport>> {
    let mut parts: BTreeMap<String, Vec<Evaluated>> = BTreeMap::new();
    for e in items {
        parts
            .entry(e.group.clone().unwrap_or_default())
            .or_default()
            .push(e.clone());
    }
    parts
        .into_iter()
        .map(|(k, v)| MetricsReport::compute(model, schema, &v).map(|r| (k, r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBound {
    pub feature: usize,
    /// Mean shift cost of the Stage 1 action on this feature.
    pub empirical_mean: f64,
    pub std_error: f64,
    /// Smallest and largest single-step cost observed for this feature.
    pub c_min: f64,
    pub c_max: f64,
    /// Largest sampling probability this feature received at any step.
    pub sigma: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub satisfied_within_2se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub runs: usize,
    pub mean_steps: f64,
    pub features: Vec<FeatureBound>,
    pub total_empirical_mean: f64,
    /// Sum of per-feature bounds.
    pub total_bound: f64,
}

/// Compares the mean per-feature cost over seeded Stage 1 trajectories of
/// one instance with E[T*] * sigma_i * C_max_i, where sigma_i is the largest
/// realized sampling probability of feature i (each step's Bernoulli
/// probability is at most that) and C_max_i the most expensive step observed.
pub fn expected_cost_bound_check(
    trajectories: &[Trajectory],
    profile: &ResolvedProfile,
) -> BoundCheck {
    let runs = trajectories.len();
    let d = profile.dim();
    let mean_steps = if runs == 0 {
        0.0
    } else {
        trajectories.iter().map(|t| t.steps() as f64).sum::<f64>() / runs as f64
    };
    let mut features = Vec::new();
    let mut total_mean = 0.0;
    let mut total_bound = 0.0;
    for i in (0..d).filter(|&i| profile.actionable[i]) {
        let costs: Vec<f64> = trajectories.iter().map(|t| t.feature_costs[i]).collect();
        let m = if runs == 0 {
            0.0
        } else {
            costs.iter().sum::<f64>() / runs as f64
        };
        let se = if runs > 1 {
            let var = costs.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (runs - 1) as f64;
            (var / runs as f64).sqrt()
        } else {
            0.0
        };
        let mut c_min = f64::INFINITY;
        let mut c_max: f64 = 0.0;
        let mut sigma: f64 = 0.0;
        for rec in trajectories.iter().flat_map(|t| &t.records) {
            sigma = sigma.max(rec.weights[i]);
            if rec.acted[i] {
                c_min = c_min.min(rec.marginal_costs[i]);
                c_max = c_max.max(rec.marginal_costs[i]);
            }
        }
        if c_min == f64::INFINITY {
            c_min = 0.0;
        }
        let bound = mean_steps * sigma * c_max;
        total_mean += m;
        total_bound += bound;
        features.push(FeatureBound {
            feature: i,
            empirical_mean: m,
            std_error: se,
            c_min,
            c_max,
            sigma,
            bound,
            satisfied: m <= bound + 1e-12,
            satisfied_within_2se: m <= bound + 2.0 * se + 1e-12,
        });
    }
    BoundCheck {
        runs,
        mean_steps,
        features,
        total_empirical_mean: total_mean,
        total_bound,
    }
}
