//! Browser demo over a synthetic loan population.
//!
//! [`Demo`] holds the dataset, percentile table and a logistic model trained
//! at construction. Three operations are exported to JavaScript through
//! [`DemoHandle`]; each returns a JSON string.

use serde::Serialize;
use upar_core::data::{build_quantile_table, generate_synthetic, FeatureSpec};
use upar_core::engine::{generate_recourse_traced, individual_seed};
use upar_core::model::train_logistic;
use upar_core::preferences::default_profile;
use upar_core::{
    Dataset, DatasetSchema, EngineConfig, LinearModel, Predictor, PreferenceProfile, QuantileTable,
    RecourseResult, Result,
};
use wasm_bindgen::prelude::*;

const POPULATION: usize = 600;

pub fn loan_schema() -> DatasetSchema {
    DatasetSchema::new(
        vec![
            FeatureSpec::continuous("duration", 4.0, 72.0).with_step(1.0),
            FeatureSpec::continuous("amount", 250.0, 18000.0).with_step(250.0),
            FeatureSpec::categorical("guarantor", &[0.0, 1.0]),
            FeatureSpec::continuous("age", 19.0, 75.0).with_actionable(false),
        ],
        "approved",
        "1",
    )
    .expect("static schema is valid")
}

#[derive(Debug, Clone, Serialize)]
pub struct Recourse {
    pub row: usize,
    pub instance: Vec<f64>,
    pub result: RecourseResult,
    /// Candidate point after each Stage 1 step, starting at the instance.
    pub path: Vec<Vec<f64>>,
    /// Favorable-class probability along `path`.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub mean_cost: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges over [0, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean realized share of `duration`.
    pub mean: f64,
    pub requested: f64,
}

pub struct Demo {
    pub schema: DatasetSchema,
    pub data: Dataset,
    pub quantiles: QuantileTable,
    pub model: LinearModel,
    pub negatives: Vec<usize>,
}

impl Demo {
    pub fn build(seed: u64) -> Result<Self> {
        let schema = loan_schema();
        let data = generate_synthetic(seed, POPULATION, &schema, 0.15)?;
        let quantiles = build_quantile_table(&data)?;
        let model = train_logistic(&data, 1e-3, 1500, 1.0, seed)?;
        let mut negatives = Vec::new();
        for (k, row) in data.rows.iter().enumerate() {
            if model.predict_label(row)? == -1 {
                negatives.push(k);
            }
        }
        Ok(Self {
            schema,
            data,
            quantiles,
            model,
            negatives,
        })
    }

    /// Default profile with `duration` weighted `share` against `amount`.
    pub fn profile(&self, share: f64, tau: f64) -> Result<PreferenceProfile> {
        let mut p = default_profile(&self.schema)?;
        p.gamma.insert("duration".into(), share);
        p.gamma.insert("amount".into(), 1.0 - share);
        p.tau = tau;
        Ok(p)
    }

    pub fn recourse(&self, row: usize, share: f64, tau: f64, seed: u64) -> Result<Recourse> {
        let x = self
            .data
            .rows
            .get(row)
            .ok_or_else(|| upar_core::Error::InvalidInput(format!("no row {row}")))?;
        let profile = self.profile(share, tau)?;
        let (result, trajectory) = generate_recourse_traced(
            &self.model,
            x,
            &profile,
            &self.quantiles,
            &EngineConfig::default(),
            seed,
        )?;
        let mut path = vec![x.clone()];
        let mut probabilities = vec![self.model.predict_proba(x)?];
        for rec in &trajectory.records {
            path.push(x.iter().zip(&rec.candidate).map(|(a, r)| a + r).collect());
            probabilities.push(rec.prediction);
        }
        Ok(Recourse {
            row,
            instance: x.clone(),
            result,
            path,
            probabilities,
        })
    }

    fn batch(
        &self,
        share: f64,
        tau: f64,
        seed: u64,
        individuals: usize,
    ) -> Result<Vec<RecourseResult>> {
        let profile = self.profile(share, tau)?;
        self.negatives
            .iter()
            .take(individuals)
            .map(|&k| {
                upar_core::generate_recourse(
                    &self.model,
                    &self.data.rows[k],
                    &profile,
                    &self.quantiles,
                    &EngineConfig::default(),
                    individual_seed(seed, k as u64),
                )
            })
            .collect()
    }

    /// Mean total cost of valid recourses at each temperature.
    pub fn tau_sweep(
        &self,
        share: f64,
        taus: &[f64],
        seed: u64,
        individuals: usize,
    ) -> Result<Vec<SweepRow>> {
        taus.iter()
            .map(|&tau| {
                let results = self.batch(share, tau, seed, individuals)?;
                let valid: Vec<f64> = results
                    .iter()
                    .filter(|r| r.valid)
                    .map(|r| r.total_cost_after)
                    .collect();
                Ok(SweepRow {
                    tau,
                    mean_cost: valid.iter().sum::<f64>() / valid.len().max(1) as f64,
                    success_rate: valid.len() as f64 / results.len().max(1) as f64,
                })
            })
            .collect()
    }

    /// Distribution of the realized `duration` cost share.
    pub fn gamma_hat_histogram(
        &self,
        share: f64,
        tau: f64,
        seed: u64,
        individuals: usize,
        bins: usize,
    ) -> Result<Histogram> {
        let bins = bins.max(1);
        let shares: Vec<f64> = self
            .batch(share, tau, seed, individuals)?
            .iter()
            .filter(|r| r.valid)
            .filter_map(|r| r.fractional_costs.as_ref()?.get("duration").copied())
            .collect();
        let mut counts = vec![0; bins];
        for s in &shares {
            counts[((s * bins as f64) as usize).min(bins - 1)] += 1;
        }
        Ok(Histogram {
            edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
            counts,
            mean: shares.iter().sum::<f64>() / shares.len().max(1) as f64,
            requested: share,
        })
    }
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct DemoHandle(Demo);

#[wasm_bindgen]
impl DemoHandle {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<DemoHandle, JsError> {
        Demo::build(seed.into())
            .map(DemoHandle)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn schema(&self) -> String {
        serde_json::to_string(&self.0.schema).unwrap_or_default()
    }

    /// Rows the model declines.
    pub fn negatives(&self) -> Vec<u32> {
        self.0.negatives.iter().map(|&k| k as u32).collect()
    }

    pub fn recourse(
        &self,
        row: u32,
        share: f64,
        tau: f64,
        seed: u32,
    ) -> std::result::Result<String, JsError> {
        js(self.0.recourse(row as usize, share, tau, seed.into()))
    }

    #[wasm_bindgen(js_name = tauSweep)]
    pub fn tau_sweep(
        &self,
        share: f64,
        taus: Vec<f64>,
        seed: u32,
        individuals: u32,
    ) -> std::result::Result<String, JsError> {
        js(self
            .0
            .tau_sweep(share, &taus, seed.into(), individuals as usize))
    }

    #[wasm_bindgen(js_name = gammaHatHistogram)]
    pub fn gamma_hat_histogram(
        &self,
        share: f64,
        tau: f64,
        seed: u32,
        individuals: u32,
        bins: u32,
    ) -> std::result::Result<String, JsError> {
        js(self
            .0
            .gamma_hat_histogram(share, tau, seed.into(), individuals as usize, bins as usize))
    }
}
