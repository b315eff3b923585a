//! Preference-aware actionable recourse for binary classifiers.
//!
//! A negatively classified individual states how they would like the cost
//! of change spread across features; the engine walks towards the decision
//! boundary in small steps whose feature choice is sampled from those
//! preferences, then trims unnecessary continuous moves.

pub mod baselines;
pub mod cost;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preferences;

pub use cost::CostConfig;
pub use data::{Dataset, DatasetSchema, FeatureKind, FeatureSpec, Monotonicity, QuantileTable};
pub use engine::{generate_recourse, EngineConfig, Method, RecourseResult, Trajectory};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{LinearModel, MlpModel, Model, Predictor};
pub use preferences::{PreferenceProfile, ResolvedProfile};
