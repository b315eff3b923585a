//! Log percentile-shift cost of feature moves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::QuantileTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// Percentiles are clamped to [eps_q, 1 - eps_q] before taking logs.
    #[serde(default = "default_eps_q")]
    pub epsilon_q: f64,
    /// Minimum cost of any nonzero move.
    #[serde(default = "default_eps_c")]
    pub epsilon_c: f64,
}

fn default_eps_q() -> f64 {
    0.005
}
fn default_eps_c() -> f64 {
    1e-4
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            epsilon_q: default_eps_q(),
            epsilon_c: default_eps_c(),
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_q > 0.0 && self.epsilon_q < 0.5) {
            return Err(Error::InvalidInput("epsilon_q must lie in (0, 0.5)".into()));
        }
        if !(self.epsilon_c > 0.0 && self.epsilon_c.is_finite()) {
            return Err(Error::InvalidInput("epsilon_c must be positive".into()));
        }
        Ok(())
    }
}

fn clamped(q: &QuantileTable, feature: usize, v: f64, cfg: &CostConfig) -> f64 {
    q.percentile(feature, v)
        .clamp(cfg.epsilon_q, 1.0 - cfg.epsilon_q)
}

/// |log((1 - Q(x + r)) / (1 - Q(x)))|, floored at `epsilon_c` for any nonzero
/// move and exactly 0 for r = 0.
pub fn shift_cost(q: &QuantileTable, feature: usize, x: f64, r: f64, cfg: &CostConfig) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let from = 1.0 - clamped(q, feature, x, cfg);
    let to = 1.0 - clamped(q, feature, x + r, cfg);
    (to / from).ln().abs().max(cfg.epsilon_c)
}

/// Marginal cost of moving from `current` by one step `delta`.
pub fn step_cost(
    q: &QuantileTable,
    feature: usize,
    current: f64,
    delta: f64,
    cfg: &CostConfig,
) -> f64 {
    shift_cost(q, feature, current, delta, cfg)
}

/// Per-feature shift costs of an action (0 where r_i = 0).
pub fn feature_costs(q: &QuantileTable, x: &[f64], r: &[f64], cfg: &CostConfig) -> Vec<f64> {
    x.iter()
        .zip(r)
        .enumerate()
        .map(|(i, (&xi, &ri))| shift_cost(q, i, xi, ri, cfg))
        .collect()
}

/// Sum of shift costs over actionable features. Errors if the action touches a
/// non-actionable feature.
pub fn total_cost(q: &QuantileTable, x: &[f64], r: &[f64], cfg: &CostConfig) -> Result<f64> {
    for (f, &ri) in q.schema.features.iter().zip(r) {
        if !f.actionable && ri != 0.0 {
            return Err(Error::NonActionableChange(f.name.clone()));
        }
    }
    Ok(actionable_cost(q, x, r, cfg))
}

/// Sum of shift costs over actionable features, ignoring any change to
/// non-actionable ones.
pub fn actionable_cost(q: &QuantileTable, x: &[f64], r: &[f64], cfg: &CostConfig) -> f64 {
    feature_costs(q, x, r, cfg)
        .iter()
        .zip(&q.schema.features)
        .filter(|(_, f)| f.actionable)
        .map(|(c, _)| c)
        .sum()
}

/// Share of continuous cost carried by each continuous actionable feature.
/// `None` when no continuous actionable feature moved.
pub fn fractional_costs(
    q: &QuantileTable,
    x: &[f64],
    r: &[f64],
    cfg: &CostConfig,
) -> Option<BTreeMap<String, f64>> {
    let con = q.schema.continuous_actionable();
    let costs: Vec<f64> = con
        .iter()
        .map(|&i| shift_cost(q, i, x[i], r[i], cfg))
        .collect();
    let total: f64 = costs.iter().sum();
    if total <= 0.0 {
        return None;
    }
    Some(
        con.iter()
            .zip(costs)
            .map(|(&i, c)| (q.schema.features[i].name.clone(), c / total))
            .collect(),
    )
}
