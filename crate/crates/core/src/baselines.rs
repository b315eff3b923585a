//! Comparison counterfactual methods: Growing Spheres and Wachter-style
//! gradient search. Both work in min-max scaled space, snap categorical
//! coordinates to allowed values before classifying, and deliberately
//! ignore actionability and preferences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{min_max_scale, min_max_unscale, DatasetSchema};
use crate::engine::{Method, RecourseResult};
use crate::error::{Error, Result};
use crate::model::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowingSpheresConfig {
    pub initial_radius: f64,
    pub growth: f64,
    pub samples_per_shell: usize,
    pub max_shells: usize,
}

impl Default for GrowingSpheresConfig {
    fn default() -> Self {
        Self {
            initial_radius: 0.05,
            growth: 1.25,
            samples_per_shell: 200,
            max_shells: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WachterConfig {
    /// Validity weights tried in order until the counterfactual is valid.
    pub lambdas: Vec<f64>,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Probability the prediction term pulls towards; just above 0.5.
    pub target: f64,
}

impl Default for WachterConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5],
            learning_rate: 0.1,
            max_iterations: 500,
            tolerance: 1e-7,
            target: 0.501,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineConfig {
    #[serde(default)]
    pub gs: GrowingSpheresConfig,
    #[serde(default)]
    pub wachter: WachterConfig,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gs;
        if !(g.initial_radius > 0.0 && g.growth > 1.0) {
            return Err(Error::InvalidInput(
                "growing spheres needs initial_radius > 0 and growth > 1".into(),
            ));
        }
        let w = &self.wachter;
        if w.lambdas.is_empty() || w.lambdas.iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidInput(
                "wachter lambdas must be positive".into(),
            ));
        }
        if !(w.learning_rate > 0.0 && w.tolerance > 0.0 && w.target > 0.5 && w.target < 1.0) {
            return Err(Error::InvalidInput("invalid wachter step settings".into()));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn baseline_result(
    method: Method,
    x: &[f64],
    point: Option<Vec<f64>>,
    probability: f64,
    seed: u64,
    diagnostic: Option<String>,
    started: web_time::Instant,
) -> RecourseResult {
    let valid = point.is_some();
    let action: Vec<f64> = match point {
        Some(p) => p.iter().zip(x).map(|(a, b)| a - b).collect(),
        None => vec![0.0; x.len()],
    };
    RecourseResult {
        method,
        valid,
        instance: x.to_vec(),
        stage1_action: action.clone(),
        final_action: action,
        steps_used: None,
        total_cost_before: 0.0,
        total_cost_after: 0.0,
        fractional_costs: None,
        final_probability: probability,
        cost_correction_applied: false,
        seed,
        diagnostic,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

fn ensure_negative<P: Predictor + ?Sized>(model: &P, x: &[f64]) -> Result<f64> {
    let p = model.predict_proba(x)?;
    if p >= 0.5 {
        return Err(Error::AlreadyPositive(p));
    }
    Ok(p)
}

/// Uniform sampling in expanding spherical shells around the scaled
/// instance; returns the closest favorable sample of the first shell that
/// contains one. Each shell draws from its own RNG stream, so raising
/// `samples_per_shell` only adds samples.
pub fn growing_spheres<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    schema: &DatasetSchema,
    cfg: &GrowingSpheresConfig,
    seed: u64,
) -> Result<RecourseResult> {
    let started = web_time::Instant::now();
    let p0 = ensure_negative(model, x)?;
    let origin = min_max_scale(x, schema);
    let d = origin.len();
    let dim = d as f64;

    for shell in 0..cfg.max_shells {
        let outer = cfg.initial_radius * cfg.growth.powi(shell as i32);
        let inner = if shell == 0 {
            0.0
        } else {
            cfg.initial_radius * cfg.growth.powi(shell as i32 - 1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shell as u64);
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        for _ in 0..cfg.samples_per_shell {
            let dir: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: f64 = rng.random();
            let radius =
                (inner.powf(dim) + u * (outer.powf(dim) - inner.powf(dim))).powf(1.0 / dim);
            if norm == 0.0 {
                continue;
            }
            let scaled: Vec<f64> = origin
                .iter()
                .zip(&dir)
                .map(|(o, v)| (o + radius * v / norm).clamp(0.0, 1.0))
                .collect();
            let point = min_max_unscale(&scaled, schema);
            let p = model.predict_proba(&point)?;
            if p >= 0.5 {
                let dist = distance(&min_max_scale(&point, schema), &origin);
                if best.as_ref().is_none_or(|b| dist < b.0) {
                    best = Some((dist, point, p));
                }
            }
        }
        if let Some((_, point, p)) = best {
            return Ok(baseline_result(
                Method::GrowingSpheres,
                x,
                Some(point),
                p,
                seed,
                Some(format!("found in shell {shell}")),
                started,
            ));
        }
    }
    Ok(baseline_result(
        Method::GrowingSpheres,
        x,
        None,
        p0,
        seed,
        Some(format!(
            "no counterfactual within {} shells",
            cfg.max_shells
        )),
        started,
    ))
}

/// Map from the relaxed scaled vector to raw feature units, without snapping.
fn relaxed_point(u: &[f64], schema: &DatasetSchema) -> Vec<f64> {
    u.iter()
        .zip(&schema.features)
        .map(|(&s, f)| f.lower() + s * f.width())
        .collect()
}

/// Projected gradient descent on lambda * (p - target)^2 + ||u - u0||_2 in
/// scaled space, raising lambda until the snapped point is favorable. When
/// snapping categorical coordinates breaks validity, they are fixed at their
/// snapped values and the continuous coordinates are optimized again.
pub fn wachter<P: Predictor + ?Sized>(
    model: &P,
    x: &[f64],
    schema: &DatasetSchema,
    cfg: &WachterConfig,
) -> Result<RecourseResult> {
    let started = web_time::Instant::now();
    let p0 = ensure_negative(model, x)?;
    let origin = min_max_scale(x, schema);
    let widths: Vec<f64> = schema.features.iter().map(|f| f.width()).collect();
    let mut frozen = vec![false; x.len()];

    let objective = |u: &[f64], lambda: f64| -> Result<f64> {
        let p = model.predict_proba(&relaxed_point(u, schema))?;
        Ok(lambda * (p - cfg.target).powi(2) + distance(u, &origin))
    };

    let descend = |u: &mut Vec<f64>, lambda: f64, frozen: &[bool]| -> Result<()> {
        let mut value = objective(u, lambda)?;
        for _ in 0..cfg.max_iterations {
            let point = relaxed_point(u, schema);
            let p = model.predict_proba(&point)?;
            let sens = model.sensitivity(&point)?;
            let dist = distance(u, &origin);
            let grad: Vec<f64> = (0..u.len())
                .map(|i| {
                    if frozen[i] {
                        return 0.0;
                    }
                    let pull = 2.0 * lambda * (p - cfg.target) * sens[i] * widths[i];
                    let spring = if dist > 0.0 {
                        (u[i] - origin[i]) / dist
                    } else {
                        0.0
                    };
                    pull + spring
                })
                .collect();
            // backtracking on the projected step
            let mut lr = cfg.learning_rate;
            let mut moved = false;
            while lr > 1e-12 {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(&grad)
                    .map(|(a, g)| (a - lr * g).clamp(0.0, 1.0))
                    .collect();
                let trial_value = objective(&trial, lambda)?;
                if trial_value < value {
                    let step = distance(&trial, u);
                    *u = trial;
                    value = trial_value;
                    moved = step > cfg.tolerance;
                    break;
                }
                lr *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Ok(())
    };

    let mut u = origin.clone();
    let mut last_p = p0;
    for &lambda in &cfg.lambdas {
        descend(&mut u, lambda, &frozen)?;
        let mut candidate = min_max_unscale(&u, schema);
        last_p = model.predict_proba(&candidate)?;
        if last_p < 0.5 && !frozen.iter().any(|&f| f) {
            let snapped = min_max_scale(&candidate, schema);
            if snapped != u {
                u = snapped;
                for (flag, f) in frozen.iter_mut().zip(&schema.features) {
                    *flag = f.is_categorical();
                }
                descend(&mut u, lambda, &frozen)?;
                candidate = min_max_unscale(&u, schema);
                last_p = model.predict_proba(&candidate)?;
            }
        }
        if last_p >= 0.5 {
            return Ok(baseline_result(
                Method::Wachter,
                x,
                Some(candidate),
                last_p,
                0,
                Some(format!("valid at lambda {lambda}")),
                started,
            ));
        }
    }
    Ok(baseline_result(
        Method::Wachter,
        x,
        None,
        last_p,
        0,
        Some("lambda schedule exhausted without a valid counterfactual".into()),
        started,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::model::LinearModel;

    fn line() -> DatasetSchema {
        DatasetSchema::new(vec![FeatureSpec::continuous("a", -1.0, 1.0)], "y", "1").unwrap()
    }

    fn plane() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                FeatureSpec::continuous("a", -1.0, 1.0),
                FeatureSpec::continuous("b", -1.0, 1.0),
            ],
            "y",
            "1",
        )
        .unwrap()
    }

    #[test]
    fn wachter_one_dimensional_minimum() {
        let model = LinearModel::new(vec![1.0], 0.0);
        let r = wachter(&model, &[-0.5], &line(), &WachterConfig::default()).unwrap();
        assert!(r.valid);
        // the penalised minimum sits just past the boundary at logit(target)
        assert!(
            (r.final_action[0] - 0.5).abs() < 0.01,
            "{:?}",
            r.final_action
        );
        assert!(model.predict_label(&r.counterfactual()).unwrap() == 1);
    }

    #[test]
    fn wachter_single_huge_lambda_projects_to_boundary() {
        let model = LinearModel::new(vec![1.0], 0.0);
        let cfg = WachterConfig {
            lambdas: vec![1e6],
            ..Default::default()
        };
        let r = wachter(&model, &[-0.5], &line(), &cfg).unwrap();
        assert!(r.valid);
        let boundary = (cfg.target / (1.0 - cfg.target)).ln();
        assert!((r.counterfactual()[0] - boundary).abs() < 1e-3);
    }

    #[test]
    fn wachter_repairs_categorical_snapping() {
        // relaxed optimum puts g near 0.3; rounding it to 0 must be repaired via a
        let schema = DatasetSchema::new(
            vec![
                FeatureSpec::continuous("a", 0.0, 1.0),
                FeatureSpec::categorical("g", &[0.0, 1.0]),
            ],
            "y",
            "1",
        )
        .unwrap();
        let model = LinearModel::new(vec![4.0, 4.0], -3.0);
        let r = wachter(&model, &[0.0, 0.0], &schema, &WachterConfig::default()).unwrap();
        assert!(r.valid, "{:?}", r.diagnostic);
        let cf = r.counterfactual();
        assert!(schema.features[1].is_allowed_value(cf[1]));
        assert!(model.predict_label(&cf).unwrap() == 1);
    }

    #[test]
    fn baselines_reject_positive_instances() {
        let model = LinearModel::new(vec![1.0], 0.0);
        assert!(wachter(&model, &[0.5], &line(), &WachterConfig::default()).is_err());
        assert!(
            growing_spheres(&model, &[0.5], &line(), &GrowingSpheresConfig::default(), 1).is_err()
        );
    }

    #[test]
    fn growing_spheres_first_shells() {
        // boundary a + b = 0; x sits 0.05 (raw) from it along each axis
        let model = LinearModel::new(vec![1.0, 1.0], 0.0);
        let x = [-0.05, 0.0];
        let cfg = GrowingSpheresConfig::default();
        let r = growing_spheres(&model, &x, &plane(), &cfg, 11).unwrap();
        assert!(r.valid);
        let scaled = distance(
            &min_max_scale(&r.counterfactual(), &plane()),
            &min_max_scale(&x, &plane()),
        );
        // scaled distance to the boundary is 0.025 / sqrt(2); found within two shells
        let shell = r.diagnostic.as_deref().unwrap();
        assert!(
            shell == "found in shell 0" || shell == "found in shell 1",
            "{shell}"
        );
        assert!(scaled <= cfg.initial_radius * cfg.growth);
    }

    #[test]
    fn growing_spheres_is_seeded() {
        let model = LinearModel::new(vec![1.0, 1.0], 0.0);
        let cfg = GrowingSpheresConfig::default();
        let a = growing_spheres(&model, &[-0.4, -0.2], &plane(), &cfg, 3).unwrap();
        let b = growing_spheres(&model, &[-0.4, -0.2], &plane(), &cfg, 3).unwrap();
        assert_eq!(a.final_action, b.final_action);
    }

    #[test]
    fn growing_spheres_zero_budget() {
        let model = LinearModel::new(vec![1.0, 1.0], 0.0);
        let cfg = GrowingSpheresConfig {
            max_shells: 0,
            ..Default::default()
        };
        let r = growing_spheres(&model, &[-0.4, -0.2], &plane(), &cfg, 3).unwrap();
        assert!(!r.valid);
        assert_eq!(r.final_action, vec![0.0, 0.0]);
    }
}
