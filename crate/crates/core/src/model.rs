//! Binary classifiers with analytic input sensitivities.
//!
//! Model files are JSON with the fields `type`, `dims`, `activation`,
//! `weights` and `bias`. `dims` lists layer widths from input to output,
//! `weights[l]` is an `out x in` matrix and `bias[l]` its offset vector. A
//! logistic model is the one-layer case `dims = [D, 1]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{min_max_scale, Dataset, DatasetSchema};
use crate::error::{Error, Result};

/// Probability of the favorable class, its label, and the gradient of that
/// probability with respect to the input.
pub trait Predictor: Send + Sync {
    fn dim(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    /// +1 iff `predict_proba(x) >= 0.5`.
    fn predict_label(&self, x: &[f64]) -> Result<i8> {
        Ok(if self.predict_proba(x)? >= 0.5 { 1 } else { -1 })
    }

    /// d p(+1) / d x_i for every input coordinate.
    fn sensitivity(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }
}

impl Predictor for LinearModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    fn sensitivity(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.predict_proba(x)?;
        let g = p * (1.0 - p);
        Ok(self.weights.iter().map(|w| g * w).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`; ReLU takes 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// Fully connected network with a single logistic output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [18, 9, 3];

struct Forward {
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    logit: f64,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let m = Self { layers, activation };
        m.validate()?;
        Ok(m)
    }

    /// Glorot-uniform initialisation for `dims = [input, hidden.., 1]`.
    pub fn random(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || *dims.last().unwrap() != 1 || dims.contains(&0) {
            return Err(Error::Model(format!("bad layer dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: (0..fan_out)
                        .map(|_| {
                            (0..fan_in)
                                .map(|_| rng.random_range(-limit..limit))
                                .collect()
                        })
                        .collect(),
                    bias: (0..fan_out).map(|_| rng.random_range(-0.1..0.1)).collect(),
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs()];
        d.extend(self.layers.iter().map(|l| l.bias.len()));
        d
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Model("network has no layers".into()));
        }
        let mut width = self.layers[0].inputs();
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.is_empty() || l.weights.len() != l.bias.len() {
                return Err(Error::Model(format!(
                    "layer {k}: weight/bias size mismatch"
                )));
            }
            if l.weights.iter().any(|row| row.len() != width) {
                return Err(Error::Model(format!("layer {k}: expected {width} inputs")));
            }
            width = l.bias.len();
        }
        if width != 1 {
            return Err(Error::Model(
                "output layer must have exactly one unit".into(),
            ));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_dim(x)?;
        let (last, hidden) = self.layers.split_last().expect("validated");
        let mut pre = Vec::with_capacity(hidden.len());
        let mut a = x.to_vec();
        for layer in hidden {
            let z = layer.forward(&a);
            a = z.iter().map(|&v| self.activation.apply(v)).collect();
            pre.push(z);
        }
        let logit = last.forward(&a)[0];
        Ok(Forward { pre, logit })
    }

    /// Smallest |pre-activation| over hidden units at `x`.
    pub fn kink_distance(&self, x: &[f64]) -> Result<f64> {
        Ok(self
            .forward(x)?
            .pre
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs())))
    }

    /// Gradient of the output logit with respect to the input.
    fn logit_gradient(&self, x: &[f64], fwd: &Forward) -> Vec<f64> {
        let (last, hidden) = self.layers.split_last().expect("validated");
        let mut grad = last.weights[0].clone();
        for (layer, z) in hidden.iter().zip(&fwd.pre).rev() {
            let delta: Vec<f64> = grad
                .iter()
                .zip(z)
                .map(|(g, &zv)| g * self.activation.derivative(zv))
                .collect();
            let mut prev = vec![0.0; layer.inputs()];
            for (row, d) in layer.weights.iter().zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            grad = prev;
        }
        debug_assert_eq!(grad.len(), x.len());
        grad
    }
}

impl Predictor for MlpModel {
    fn dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.forward(x)?.logit))
    }

    fn sensitivity(&self, x: &[f64]) -> Result<Vec<f64>> {
        let fwd = self.forward(x)?;
        let p = sigmoid(fwd.logit);
        let scale = p * (1.0 - p);
        Ok(self
            .logit_gradient(x, &fwd)
            .into_iter()
            .map(|g| g * scale)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Predictor for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.dim(),
            Model::Mlp(m) => m.dim(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Linear(m) => m.predict_proba(x),
            Model::Mlp(m) => m.predict_proba(x),
        }
    }

    fn sensitivity(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Linear(m) => m.sensitivity(x),
            Model::Mlp(m) => m.sensitivity(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelType {
    Linear,
    Mlp,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "type")]
    kind: ModelType,
    dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    weights: Vec<Vec<Vec<f64>>>,
    bias: Vec<Vec<f64>>,
}

impl Model {
    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            Model::Linear(m) => ModelFile {
                kind: ModelType::Linear,
                dims: vec![m.weights.len(), 1],
                activation: None,
                weights: vec![vec![m.weights.clone()]],
                bias: vec![vec![m.bias]],
            },
            Model::Mlp(m) => ModelFile {
                kind: ModelType::Mlp,
                dims: m.dims(),
                activation: Some(m.activation),
                weights: m.layers.iter().map(|l| l.weights.clone()).collect(),
                bias: m.layers.iter().map(|l| l.bias.clone()).collect(),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.weights.len() != file.bias.len() || file.dims.len() != file.weights.len() + 1 {
            return Err(Error::Model(
                "dims, weights and bias disagree on depth".into(),
            ));
        }
        for (k, (w, b)) in file.weights.iter().zip(&file.bias).enumerate() {
            let (fan_in, fan_out) = (file.dims[k], file.dims[k + 1]);
            if w.len() != fan_out || b.len() != fan_out || w.iter().any(|r| r.len() != fan_in) {
                return Err(Error::Model(format!(
                    "layer {k} shape does not match dims {fan_in} -> {fan_out}"
                )));
            }
        }
        match file.kind {
            ModelType::Linear => {
                if file.dims.len() != 2 || file.dims[1] != 1 {
                    return Err(Error::Model("linear model must have dims [D, 1]".into()));
                }
                Ok(Model::Linear(LinearModel::new(
                    file.weights[0][0].clone(),
                    file.bias[0][0],
                )))
            }
            ModelType::Mlp => {
                let layers = file
                    .weights
                    .into_iter()
                    .zip(file.bias)
                    .map(|(weights, bias)| Layer { weights, bias })
                    .collect();
                Ok(Model::Mlp(MlpModel::new(
                    layers,
                    file.activation.unwrap_or_default(),
                )?))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads a model and checks its input width against the schema.
    pub fn load(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Self> {
        let m = Self::from_json(&std::fs::read_to_string(path)?)?;
        if m.dim() != schema.dim() {
            return Err(Error::Model(format!(
                "model expects {} inputs but schema has {} features",
                m.dim(),
                schema.dim()
            )));
        }
        Ok(m)
    }
}

fn scaled_design(dataset: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs = dataset
        .rows
        .iter()
        .map(|r| min_max_scale(r, &dataset.schema))
        .collect();
    let ys = dataset
        .labels
        .iter()
        .map(|&l| if l > 0 { 1.0 } else { 0.0 })
        .collect();
    (xs, ys)
}

fn log_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Maps first-layer weights learned on min-max scaled inputs back to raw
/// feature units.
fn unscale_first_layer(weights: &mut [Vec<f64>], bias: &mut [f64], schema: &DatasetSchema) {
    for (row, b) in weights.iter_mut().zip(bias.iter_mut()) {
        for (w, f) in row.iter_mut().zip(&schema.features) {
            let width = f.width();
            let scaled = if width > 0.0 { *w / width } else { 0.0 };
            *b -= scaled * f.lower();
            *w = scaled;
        }
    }
}

/// Full-batch gradient descent on L2-regularised log loss (bias unpenalised).
/// Inputs are min-max scaled internally and the result is expressed in raw
/// units. Steps are capped by the smoothness constants of the weight and bias
/// blocks, so the loss sequence is non-increasing.
pub fn train_logistic_with_history(
    dataset: &Dataset,
    l2: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(LinearModel, Vec<f64>)> {
    let (xs, ys) = scaled_design(dataset);
    if xs.is_empty() || !ys.contains(&1.0) || !ys.contains(&0.0) {
        return Err(Error::InsufficientData(
            "training needs both classes".into(),
        ));
    }
    if !(l2 >= 0.0 && lr > 0.0) {
        return Err(Error::InvalidInput("l2 must be >= 0 and lr > 0".into()));
    }
    let d = dataset.schema.dim();
    let n = xs.len() as f64;
    // The log-loss Hessian is below blockdiag(0.5 max|x|^2 + l2, 0.5), so
    // per-block steps of at most the inverse of those constants never raise
    // the loss.
    let max_sq = xs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let step_w = lr.min(1.0 / (0.5 * max_sq + l2));
    let step_b = lr.min(2.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-0.01..0.01)).collect();
    let mut b = 0.0;

    let objective = |w: &[f64], b: f64| -> (f64, Vec<f64>, f64) {
        let mut loss = 0.0;
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let s = x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
            let p = sigmoid(s);
            loss += log_loss(p, y);
            let r = p - y;
            for (g, a) in gw.iter_mut().zip(x) {
                *g += r * a;
            }
            gb += r;
        }
        let reg = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
        for (g, wv) in gw.iter_mut().zip(w) {
            *g = *g / n + l2 * wv;
        }
        (loss / n + reg, gw, gb / n)
    };

    let mut history = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, gw, gb) = objective(&w, b);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss}")));
        }
        history.push(loss);
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= step_w * g;
        }
        b -= step_b * gb;
    }
    let (loss, _, _) = objective(&w, b);
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    history.push(loss);

    let mut weights = vec![w];
    let mut bias = vec![b];
    unscale_first_layer(&mut weights, &mut bias, &dataset.schema);
    Ok((LinearModel::new(weights.pop().unwrap(), bias[0]), history))
}

pub fn train_logistic(
    dataset: &Dataset,
    l2: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LinearModel> {
    Ok(train_logistic_with_history(dataset, l2, epochs, lr, seed)?.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpTraining {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_mlp_epochs")]
    pub epochs: usize,
    #[serde(default = "default_mlp_lr")]
    pub lr: f64,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}
fn default_mlp_epochs() -> usize {
    500
}
fn default_mlp_lr() -> f64 {
    0.5
}

impl Default for MlpTraining {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::Relu,
            epochs: default_mlp_epochs(),
            lr: default_mlp_lr(),
            l2: 0.0,
            seed: 0,
        }
    }
}

/// Full-batch backpropagation for the small MLP, on scaled inputs.
pub fn train_mlp(dataset: &Dataset, cfg: &MlpTraining) -> Result<MlpModel> {
    let (xs, ys) = scaled_design(dataset);
    if xs.is_empty() || !ys.contains(&1.0) || !ys.contains(&0.0) {
        return Err(Error::InsufficientData(
            "training needs both classes".into(),
        ));
    }
    let mut dims = vec![dataset.schema.dim()];
    dims.extend(&cfg.hidden);
    dims.push(1);
    let mut net = MlpModel::random(&dims, cfg.activation, cfg.seed)?;
    let n = xs.len() as f64;

    for epoch in 0..cfg.epochs {
        let mut gw: Vec<Vec<Vec<f64>>> = net
            .layers
            .iter()
            .map(|l| vec![vec![0.0; l.inputs()]; l.bias.len()])
            .collect();
        let mut gb: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            // forward, keeping activations
            let mut acts = vec![x.clone()];
            let mut pres = Vec::new();
            for (k, layer) in net.layers.iter().enumerate() {
                let z = layer.forward(acts.last().unwrap());
                let a = if k + 1 == net.layers.len() {
                    z.clone()
                } else {
                    z.iter().map(|&v| net.activation.apply(v)).collect()
                };
                pres.push(z);
                acts.push(a);
            }
            let p = sigmoid(acts.last().unwrap()[0]);
            loss += log_loss(p, y);
            let mut delta = vec![p - y];
            for k in (0..net.layers.len()).rev() {
                let input = &acts[k];
                for (j, d) in delta.iter().enumerate() {
                    gb[k][j] += d;
                    for (g, a) in gw[k][j].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if k == 0 {
                    break;
                }
                let layer = &net.layers[k];
                let mut back = vec![0.0; layer.inputs()];
                for (row, d) in layer.weights.iter().zip(&delta) {
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += w * d;
                    }
                }
                delta = back
                    .iter()
                    .zip(&pres[k - 1])
                    .map(|(b, &z)| b * net.activation.derivative(z))
                    .collect();
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
        }
        for (k, layer) in net.layers.iter_mut().enumerate() {
            for (j, row) in layer.weights.iter_mut().enumerate() {
                for (i, w) in row.iter_mut().enumerate() {
                    *w -= cfg.lr * (gw[k][j][i] / n + cfg.l2 * *w);
                }
                layer.bias[j] -= cfg.lr * gb[k][j] / n;
            }
        }
    }
    let first = &mut net.layers[0];
    unscale_first_layer(&mut first.weights, &mut first.bias, &dataset.schema);
    Ok(net)
}
