//! Two-stage recourse search.
//!
//! Stage 1 walks from the instance in fixed per-feature steps. At every step
//! each actionable feature is moved independently with a probability given by
//! a temperature-scaled softmax over its preference-weighted inverse cost, in
//! the direction of the model's sensitivity. The walk stops at the first
//! favorable prediction or after `max_steps`.
//!
//! Stage 2 runs only when a categorical feature changed. It copies the final
//! categorical values into every earlier candidate and retraces from the
//! first successful step towards the origin while the patched candidate still
//! classifies favorably, dropping continuous steps the categorical change made
//! unnecessary.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{fractional_costs, shift_cost, step_cost, total_cost, CostConfig};
use crate::data::{FeatureKind, QuantileTable};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::preferences::{PreferenceProfile, ResolvedProfile};

/// Which cost enters the inverse-cost score of a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreCost {
    /// Cost from the original value to the value after the prospective step.
    #[default]
    Cumulative,
    /// Cost of the prospective step alone, from the current value.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub score_cost: ScoreCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Upar,
    GrowingSpheres,
    Wachter,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Upar => "upar",
            Method::GrowingSpheres => "growing_spheres",
            Method::Wachter => "wachter",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upar" => Ok(Method::Upar),
            "growing_spheres" | "gs" => Ok(Method::GrowingSpheres),
            "wachter" => Ok(Method::Wachter),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub acted: Vec<bool>,
    /// Move direction per feature after bound, monotonicity and ranking masks.
    pub directions: Vec<i8>,
    /// Sampling probability per feature at this step.
    pub weights: Vec<f64>,
    /// Cumulative action after the step.
    pub candidate: Vec<f64>,
    /// Cost of the step each feature actually took (0 where it did not act).
    pub marginal_costs: Vec<f64>,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Smallest step with a favorable prediction.
    pub t_hat: Option<usize>,
    /// Per-feature shift cost of the last candidate, from the original instance.
    pub feature_costs: Vec<f64>,
}

impl Trajectory {
    /// Candidate after step `t`; step 0 is the empty action.
    pub fn candidate(&self, t: usize) -> Vec<f64> {
        match t {
            0 => vec![0.0; self.feature_costs.len()],
            _ => self.records[t - 1].candidate.clone(),
        }
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseResult {
    pub method: Method,
    pub valid: bool,
    pub instance: Vec<f64>,
    pub stage1_action: Vec<f64>,
    pub final_action: Vec<f64>,
    pub steps_used: Option<usize>,
    pub total_cost_before: f64,
    pub total_cost_after: f64,
    pub fractional_costs: Option<BTreeMap<String, f64>>,
    pub final_probability: f64,
    pub cost_correction_applied: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Seconds spent in the search. Not serialized, so result files are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RecourseResult {
    /// Counterfactual point x + r.
    pub fn counterfactual(&self) -> Vec<f64> {
        self.instance
            .iter()
            .zip(&self.final_action)
            .map(|(x, r)| x + r)
            .collect()
    }

    /// Fills cost fields from the final action. Changes to non-actionable
    /// features are ignored here; they are counted as constraint violations.
    pub fn attach_costs(&mut self, q: &QuantileTable, cfg: &CostConfig) {
        let stage1 = crate::cost::actionable_cost(q, &self.instance, &self.stage1_action, cfg);
        let fin = crate::cost::actionable_cost(q, &self.instance, &self.final_action, cfg);
        self.total_cost_before = stage1;
        self.total_cost_after = fin;
        self.fractional_costs = if self.valid {
            fractional_costs(q, &self.instance, &self.final_action, cfg)
        } else {
            None
        };
    }
}

/// Mixes a base seed and an index into an independent per-individual seed.
pub fn individual_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// exp(z_i / tau) / sum_j exp(z_j / tau) over entries that are `Some`;
/// `None` entries get probability 0. Returns `None` if every entry is `None`.
pub fn softmax(scores: &[Option<f64>], tau: f64) -> Option<Vec<f64>> {
    let max = scores
        .iter()
        .flatten()
        .map(|z| z / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let exps: Vec<f64> = scores
        .iter()
        .map(|z| z.map_or(0.0, |z| (z / tau - max).exp()))
        .collect();
    let total: f64 = exps.iter().sum();
    Some(exps.into_iter().map(|e| e / total).collect())
}

fn adjacent_value(candidates: &[f64], current: f64, direction: i8) -> Option<f64> {
    const EPS: f64 = 1e-9;
    match direction {
        1 => candidates.iter().copied().find(|&v| v > current + EPS),
        -1 => candidates
            .iter()
            .rev()
            .copied()
            .find(|&v| v < current - EPS),
        _ => None,
    }
}

/// Value feature `i` would take after one step in `direction`.
fn prospective_value(
    profile: &ResolvedProfile,
    i: usize,
    current: f64,
    direction: i8,
) -> Option<f64> {
    match profile.kinds[i] {
        FeatureKind::Continuous => Some(current + direction as f64 * profile.step[i]),
        FeatureKind::Categorical => adjacent_value(&profile.candidates[i], current, direction),
    }
}

/// Inverse-cost scores z and their softmax over features with a usable
/// direction: z_i = gamma_i / cost_i for continuous features and 1 / cost_j
/// for categorical ones.
pub fn sampling_weights(
    q: &QuantileTable,
    x: &[f64],
    r_current: &[f64],
    directions: &[i8],
    profile: &ResolvedProfile,
    cfg: &EngineConfig,
) -> Option<Vec<f64>> {
    let scores: Vec<Option<f64>> = (0..x.len())
        .map(|i| {
            if !profile.actionable[i] || directions[i] == 0 {
                return None;
            }
            let current = x[i] + r_current[i];
            let next = prospective_value(profile, i, current, directions[i])?;
            let cost = match cfg.score_cost {
                ScoreCost::Cumulative => shift_cost(q, i, x[i], next - x[i], &cfg.cost),
                ScoreCost::Marginal => step_cost(q, i, current, next - current, &cfg.cost),
            };
            let preference = match profile.kinds[i] {
                FeatureKind::Continuous => profile.gamma[i],
                FeatureKind::Categorical => 1.0,
            };
            Some(preference / cost.max(cfg.cost.epsilon_c))
        })
        .collect();
    softmax(&scores, profile.tau)
}

/// Independent Bernoulli draw per feature.
pub fn sample_indicators<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<bool> {
    weights
        .iter()
        .map(|&w| rng.random::<f64>() < w.clamp(0.0, 1.0))
        .collect()
}

/// Direction of the next move per feature: the sign of the model sensitivity
/// for continuous features, and for categorical features the adjacent
/// candidate value that raises the favorable probability. Moves that break
/// monotonicity, leave the bounds, or reverse an earlier categorical move
/// (`committed`) are masked to 0.
pub fn step_direction<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    r_current: &[f64],
    profile: &ResolvedProfile,
    committed: &[i8],
) -> Result<Vec<i8>> {
    let pos: Vec<f64> = x.iter().zip(r_current).map(|(a, b)| a + b).collect();
    let sens = model.sensitivity(&pos)?;
    let needs_trial =
        (0..x.len()).any(|i| profile.actionable[i] && profile.kinds[i] == FeatureKind::Categorical);
    let p_now = if needs_trial {
        model.predict_proba(&pos)?
    } else {
        0.0
    };
    let mut dirs = vec![0i8; x.len()];
    for i in 0..x.len() {
        if !profile.actionable[i] {
            continue;
        }
        dirs[i] = match profile.kinds[i] {
            FeatureKind::Continuous => {
                let d: i8 = if sens[i] > 0.0 {
                    1
                } else if sens[i] < 0.0 {
                    -1
                } else {
                    0
                };
                let next = pos[i] + d as f64 * profile.step[i];
                let tol = 1e-9 * (profile.upper[i] - profile.lower[i]).abs().max(1.0);
                let inside = next >= profile.lower[i] - tol && next <= profile.upper[i] + tol;
                if d != 0 && profile.monotone[i].allows(d) && inside {
                    d
                } else {
                    0
                }
            }
            FeatureKind::Categorical => {
                let mut best = (0i8, p_now);
                for d in [1i8, -1] {
                    if !profile.monotone[i].allows(d) || committed[i] == -d {
                        continue;
                    }
                    let Some(v) = adjacent_value(&profile.candidates[i], pos[i], d) else {
                        continue;
                    };
                    let mut trial = pos.clone();
                    trial[i] = v;
                    let p = model.predict_proba(&trial)?;
                    if p > best.1 {
                        best = (d, p);
                    }
                }
                best.0
            }
        };
    }
    Ok(dirs)
}

/// Masks categorical features that would act for the first time while an
/// earlier-ranked one is still movable and has not acted.
fn apply_rank_guard(dirs: &mut [i8], acted_before: &[bool], profile: &ResolvedProfile) {
    let mut blocked = false;
    for &j in &profile.rank_sequence {
        if acted_before[j] {
            continue;
        }
        if blocked {
            dirs[j] = 0;
        } else if dirs[j] != 0 {
            blocked = true;
        }
    }
}

/// Stage 1: stochastic preference-guided walk until the first favorable
/// prediction or `profile.max_steps` steps.
pub fn run_stage1<P: Predictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    x: &[f64],
    profile: &ResolvedProfile,
    q: &QuantileTable,
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    model.check_dim(x)?;
    let p0 = model.predict_proba(x)?;
    if p0 >= 0.5 {
        return Err(Error::AlreadyPositive(p0));
    }
    let d = x.len();
    let mut counts = vec![0i64; d];
    let mut r = vec![0.0; d];
    let mut committed = vec![0i8; d];
    let mut acted_before = vec![false; d];
    let mut records = Vec::new();
    let mut t_hat = None;

    for t in 1..=profile.max_steps {
        let mut dirs = step_direction(model, x, &r, profile, &committed)?;
        apply_rank_guard(&mut dirs, &acted_before, profile);
        let Some(weights) = sampling_weights(q, x, &r, &dirs, profile, cfg) else {
            break;
        };
        let acted = sample_indicators(&weights, rng);
        let mut marginal = vec![0.0; d];
        for i in 0..d {
            if !acted[i] || dirs[i] == 0 {
                continue;
            }
            let current = x[i] + r[i];
            let next_r = match profile.kinds[i] {
                FeatureKind::Continuous => {
                    counts[i] += dirs[i] as i64;
                    counts[i] as f64 * profile.step[i]
                }
                FeatureKind::Categorical => {
                    let v = adjacent_value(&profile.candidates[i], current, dirs[i])
                        .expect("direction implies a neighbour");
                    committed[i] = dirs[i];
                    v - x[i]
                }
            };
            marginal[i] = step_cost(q, i, current, next_r - r[i], &cfg.cost);
            r[i] = next_r;
            acted_before[i] = true;
        }
        let pos: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a + b).collect();
        let prediction = model.predict_proba(&pos)?;
        records.push(StepRecord {
            t,
            acted: acted
                .iter()
                .zip(&dirs)
                .map(|(&a, &d)| a && d != 0)
                .collect(),
            directions: dirs,
            weights,
            candidate: r.clone(),
            marginal_costs: marginal,
            prediction,
        });
        if prediction >= 0.5 {
            t_hat = Some(t);
            break;
        }
    }
    let feature_costs = crate::cost::feature_costs(q, x, &r, &cfg.cost);
    Ok(Trajectory {
        records,
        t_hat,
        feature_costs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub action: Vec<f64>,
    pub applied: bool,
    /// Step whose patched candidate was returned.
    pub step: usize,
}

/// Stage 2: retrace continuous steps made redundant by a categorical change.
pub fn cost_correction<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    trajectory: &Trajectory,
    q: &QuantileTable,
    cfg: &EngineConfig,
) -> Result<Correction> {
    let t_hat = trajectory
        .t_hat
        .ok_or_else(|| Error::InvalidInput("trajectory has no successful step".into()))?;
    let r_hat = trajectory.candidate(t_hat);
    let categorical: Vec<usize> = q
        .schema
        .categorical_actionable()
        .into_iter()
        .filter(|&j| r_hat[j] != 0.0)
        .collect();
    let unchanged = Correction {
        action: r_hat.clone(),
        applied: false,
        step: t_hat,
    };
    if categorical.is_empty() {
        return Ok(unchanged);
    }
    let mut best = unchanged.clone();
    for t in (0..t_hat).rev() {
        let mut patched = trajectory.candidate(t);
        for &j in &categorical {
            patched[j] = r_hat[j];
        }
        let point: Vec<f64> = x.iter().zip(&patched).map(|(a, b)| a + b).collect();
        if model.predict_label(&point)? != 1 {
            break;
        }
        best = Correction {
            action: patched,
            applied: true,
            step: t,
        };
    }
    if best.applied
        && total_cost(q, x, &best.action, &cfg.cost)? > total_cost(q, x, &r_hat, &cfg.cost)?
    {
        return Ok(unchanged);
    }
    Ok(best)
}

fn check_bounds(x: &[f64], profile: &ResolvedProfile, q: &QuantileTable) -> Result<()> {
    for (i, f) in q.schema.features.iter().enumerate() {
        if !f.actionable || f.is_categorical() {
            continue;
        }
        let tol = 1e-9 * (profile.upper[i] - profile.lower[i]).abs().max(1.0);
        if x[i] < profile.lower[i] - tol || x[i] > profile.upper[i] + tol {
            return Err(Error::InstanceOutOfBounds {
                feature: f.name.clone(),
                value: x[i],
                lower: profile.lower[i],
                upper: profile.upper[i],
            });
        }
    }
    Ok(())
}

/// Full two-stage search with its Stage 1 trajectory.
pub fn generate_recourse_traced<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    profile: &PreferenceProfile,
    q: &QuantileTable,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<(RecourseResult, Trajectory)> {
    let resolved = ResolvedProfile::resolve(profile, &q.schema)?;
    generate_resolved(model, x, &resolved, q, cfg, seed)
}

pub fn generate_resolved<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    profile: &ResolvedProfile,
    q: &QuantileTable,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<(RecourseResult, Trajectory)> {
    if x.len() != q.schema.dim() {
        return Err(Error::Dimension {
            expected: q.schema.dim(),
            got: x.len(),
        });
    }
    check_bounds(x, profile, q)?;
    let started = web_time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectory = run_stage1(model, x, profile, q, cfg, &mut rng)?;
    let stage1 = trajectory.candidate(trajectory.steps());

    let mut result = RecourseResult {
        method: Method::Upar,
        valid: false,
        instance: x.to_vec(),
        stage1_action: stage1.clone(),
        final_action: stage1.clone(),
        steps_used: trajectory.t_hat,
        total_cost_before: 0.0,
        total_cost_after: 0.0,
        fractional_costs: None,
        final_probability: trajectory
            .records
            .last()
            .map_or(model.predict_proba(x)?, |r| r.prediction),
        cost_correction_applied: false,
        seed,
        diagnostic: None,
        wall_time: 0.0,
    };

    if trajectory.t_hat.is_some() {
        let correction = cost_correction(model, x, &trajectory, q, cfg)?;
        let point: Vec<f64> = x
            .iter()
            .zip(&correction.action)
            .map(|(a, b)| a + b)
            .collect();
        result.final_probability = model.predict_proba(&point)?;
        result.valid = result.final_probability >= 0.5;
        result.cost_correction_applied = correction.applied;
        result.final_action = correction.action;
        result.total_cost_before = total_cost(q, x, &stage1, &cfg.cost)?;
        result.total_cost_after = total_cost(q, x, &result.final_action, &cfg.cost)?;
        result.fractional_costs = fractional_costs(q, x, &result.final_action, &cfg.cost);
    } else {
        result.total_cost_before = total_cost(q, x, &stage1, &cfg.cost)?;
        result.total_cost_after = result.total_cost_before;
        result.diagnostic = Some(if trajectory.steps() < profile.max_steps {
            format!(
                "no feasible move after {} steps (p = {:.4})",
                trajectory.steps(),
                result.final_probability
            )
        } else {
            format!(
                "no recourse within {} steps (p = {:.4})",
                profile.max_steps, result.final_probability
            )
        });
    }
    result.wall_time = started.elapsed().as_secs_f64();
    Ok((result, trajectory))
}

/// Runs both stages and fills costs and fractional costs.
pub fn generate_recourse<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    profile: &PreferenceProfile,
    q: &QuantileTable,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<RecourseResult> {
    Ok(generate_recourse_traced(model, x, profile, q, cfg, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_quantile_table, Dataset, DatasetSchema, FeatureSpec, Monotonicity};
    use crate::model::LinearModel;
    use crate::preferences::default_profile;

    fn one_d() -> (QuantileTable, PreferenceProfile) {
        let schema = DatasetSchema::new(
            vec![FeatureSpec::continuous("a", -1.0, 1.0).with_step(0.1)],
            "y",
            "1",
        )
        .unwrap();
        let rows = (0..=20).map(|k| vec![-1.0 + 0.1 * k as f64]).collect();
        let d = Dataset {
            schema: schema.clone(),
            rows,
            labels: vec![1; 21],
        };
        (
            build_quantile_table(&d).unwrap(),
            default_profile(&schema).unwrap(),
        )
    }

    #[test]
    fn softmax_examples() {
        let w = softmax(&[Some(3.0), Some(3.0)], 0.7).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = softmax(&[Some(2.0), Some(1.0)], 1.0).unwrap();
        let e = 1f64.exp();
        assert!((w[0] - e * e / (e * e + e)).abs() < 1e-12);
        assert!((w[0] - 0.731).abs() < 1e-3);
        let cold = softmax(&[Some(2.0), Some(1.0)], 1e-3).unwrap();
        assert!(cold[0] > 1.0 - 1e-12);
        assert!(softmax(&[None, None], 1.0).is_none());
        assert_eq!(softmax(&[Some(1.0), None], 1.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn bernoulli_extremes_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(sample_indicators(&[1.0, 0.0], &mut rng), vec![true, false]);
        }
        let hits = (0..10_000)
            .filter(|_| sample_indicators(&[0.5], &mut rng)[0])
            .count();
        let mean = hits as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
    }

    #[test]
    fn one_dimensional_walk() {
        let (q, profile) = one_d();
        let model = LinearModel::new(vec![1.0], 0.0);
        let (res, traj) =
            generate_recourse_traced(&model, &[-0.5], &profile, &q, &EngineConfig::default(), 1)
                .unwrap();
        assert_eq!(traj.t_hat, Some(5));
        assert!(res.valid);
        assert!((res.final_action[0] - 0.5).abs() < 1e-12);
        assert_eq!(res.steps_used, Some(5));
    }

    #[test]
    fn already_positive_is_rejected() {
        let (q, profile) = one_d();
        let model = LinearModel::new(vec![1.0], 0.0);
        assert!(matches!(
            generate_recourse(&model, &[0.3], &profile, &q, &EngineConfig::default(), 1),
            Err(Error::AlreadyPositive(_))
        ));
    }

    #[test]
    fn zero_step_budget_fails_immediately() {
        let (q, profile) = one_d();
        let mut resolved = ResolvedProfile::resolve(&profile, &q.schema).unwrap();
        resolved.max_steps = 0;
        let model = LinearModel::new(vec![1.0], 0.0);
        let (res, traj) =
            generate_resolved(&model, &[-0.5], &resolved, &q, &EngineConfig::default(), 1).unwrap();
        assert!(!res.valid);
        assert!(traj.records.is_empty());
        assert_eq!(res.final_action, vec![0.0]);
    }

    #[test]
    fn direction_masks() {
        let schema = DatasetSchema::new(
            vec![
                FeatureSpec::continuous("a", 0.0, 1.0),
                FeatureSpec::continuous("b", 0.0, 1.0)
                    .with_monotonicity(Monotonicity::NonDecreasing),
                FeatureSpec::continuous("c", 0.0, 1.0),
            ],
            "y",
            "1",
        )
        .unwrap();
        let resolved =
            ResolvedProfile::resolve(&default_profile(&schema).unwrap(), &schema).unwrap();
        let model = LinearModel::new(vec![1.0, -1.0, 1.0], -5.0);
        let dirs = step_direction(&model, &[0.5, 0.5, 1.0], &[0.0; 3], &resolved, &[0; 3]).unwrap();
        assert_eq!(dirs, vec![1, 0, 0]);
    }

    #[test]
    fn seeds_are_mixed() {
        assert_ne!(individual_seed(1, 0), individual_seed(1, 1));
        assert_ne!(individual_seed(1, 0), individual_seed(2, 0));
        assert_eq!(individual_seed(7, 3), individual_seed(7, 3));
    }
}
