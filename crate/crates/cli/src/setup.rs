//! Dataset and model specifications shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use upar_core::baselines::BaselineConfig;
use upar_core::data::{
    build_quantile_table_with, generate_synthetic, Dataset, DatasetSchema, LoadReport,
    QuantilePopulation,
};
use upar_core::model::{train_logistic, train_mlp, MlpTraining, Model};
use upar_core::{EngineConfig, Predictor, QuantileTable};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
    Synthetic {
        schema: PathBuf,
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

fn default_separation() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticTraining {
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_l2() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    2000
}
fn default_lr() -> f64 {
    1.0
}

impl Default for LogisticTraining {
    fn default() -> Self {
        Self {
            l2: default_l2(),
            epochs: default_epochs(),
            lr: default_lr(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    /// A model file written by `upar run` or [`Model::save`].
    Load {
        path: PathBuf,
    },
    Logistic(LogisticTraining),
    Mlp(MlpTraining),
}

/// Everything needed to answer recourse requests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Setup {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub population: QuantilePopulation,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

/// Loaded, immutable artifacts.
pub struct Loaded {
    pub schema: DatasetSchema,
    pub data: Dataset,
    pub report: LoadReport,
    pub quantiles: QuantileTable,
    pub model: Model,
    pub engine: EngineConfig,
    pub baselines: BaselineConfig,
}

impl Loaded {
    /// Rows the model classifies unfavorably, in dataset order.
    pub fn negatives(&self) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (k, row) in self.data.rows.iter().enumerate() {
            if self.model.predict_label(row)? == -1 {
                out.push(k);
            }
        }
        Ok(out)
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

impl Setup {
    /// Files the setup refers to, with the config key that names them.
    pub fn referenced_files(&self) -> Vec<(&'static str, &Path)> {
        let mut files = match &self.dataset {
            DatasetSpec::Csv { path, schema } => {
                vec![
                    ("dataset.csv.path", path.as_path()),
                    ("dataset.csv.schema", schema.as_path()),
                ]
            }
            DatasetSpec::Synthetic { schema, .. } => {
                vec![("dataset.synthetic.schema", schema.as_path())]
            }
        };
        if let ModelSpec::Load { path } = &self.model {
            files.push(("model.load.path", path.as_path()));
        }
        files
    }

    pub fn load(&self, base: &Path) -> Result<Loaded> {
        self.engine.cost.validate()?;
        self.baselines.validate()?;
        let (schema, data, report) = match &self.dataset {
            DatasetSpec::Csv { path, schema } => {
                let schema = DatasetSchema::from_json(&read_text(&resolve(base, schema))?)?;
                let path = resolve(base, path);
                let file = std::fs::File::open(&path).map_err(|e| AppError::io(&path, e))?;
                let (data, report) = upar_core::data::read_csv(file, &schema)?;
                (schema, data, report)
            }
            DatasetSpec::Synthetic {
                schema,
                n,
                seed,
                separation,
            } => {
                let schema = DatasetSchema::from_json(&read_text(&resolve(base, schema))?)?;
                let data = generate_synthetic(*seed, *n, &schema, *separation)?;
                (schema, data, LoadReport::default())
            }
        };
        let quantiles = build_quantile_table_with(&data, self.population)?;
        let model = match &self.model {
            ModelSpec::Load { path } => Model::load(resolve(base, path), &schema)?,
            ModelSpec::Logistic(t) => {
                Model::Linear(train_logistic(&data, t.l2, t.epochs, t.lr, t.seed)?)
            }
            ModelSpec::Mlp(cfg) => Model::Mlp(train_mlp(&data, cfg)?),
        };
        Ok(Loaded {
            schema,
            data,
            report,
            quantiles,
            model,
            engine: self.engine,
            baselines: self.baselines.clone(),
        })
    }
}
