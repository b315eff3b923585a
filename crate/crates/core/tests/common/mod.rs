#![allow(dead_code)]

use std::collections::BTreeMap;

use upar_core::data::{
    build_quantile_table, generate_synthetic, Dataset, DatasetSchema, FeatureSpec,
};
use upar_core::model::{train_logistic, LinearModel};
use upar_core::preferences::{default_profile, PreferenceProfile};
use upar_core::QuantileTable;

pub struct Fixture {
    pub schema: DatasetSchema,
    pub data: Dataset,
    pub q: QuantileTable,
    pub model: LinearModel,
}

impl Fixture {
    pub fn negatives(&self, limit: usize) -> Vec<Vec<f64>> {
        self.data
            .rows
            .iter()
            .filter(|x| {
                use upar_core::Predictor;
                self.model.predict_label(x).unwrap() == -1
            })
            .take(limit)
            .cloned()
            .collect()
    }

    pub fn profile(&self, gamma: &[(&str, f64)]) -> PreferenceProfile {
        let mut p = default_profile(&self.schema).unwrap();
        p.gamma = gmap(gamma);
        p
    }
}

pub fn gmap(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn fixture(schema: DatasetSchema, n: usize, seed: u64) -> Fixture {
    let data = generate_synthetic(seed, n, &schema, 0.15).unwrap();
    let q = build_quantile_table(&data).unwrap();
    let model = train_logistic(&data, 1e-3, 2000, 1.0, seed).unwrap();
    Fixture {
        schema,
        data,
        q,
        model,
    }
}

/// Two continuous actionable features.
pub fn two_feature(n: usize, seed: u64) -> Fixture {
    let schema = DatasetSchema::new(
        vec![
            FeatureSpec::continuous("a", 0.0, 100.0),
            FeatureSpec::continuous("b", 0.0, 100.0),
        ],
        "y",
        "1",
    )
    .unwrap();
    fixture(schema, n, seed)
}

/// Three continuous, two categorical and one immutable feature.
pub fn mixed(n: usize, seed: u64) -> Fixture {
    let schema = DatasetSchema::new(
        vec![
            FeatureSpec::continuous("duration", 0.0, 72.0),
            FeatureSpec::continuous("amount", 0.0, 20000.0),
            FeatureSpec::continuous("savings", 0.0, 5000.0),
            FeatureSpec::categorical("guarantor", &[0.0, 1.0, 2.0]),
            FeatureSpec::categorical("coapplicant", &[0.0, 1.0]),
            FeatureSpec::continuous("age", 18.0, 80.0).with_actionable(false),
        ],
        "y",
        "1",
    )
    .unwrap();
    fixture(schema, n, seed)
}
