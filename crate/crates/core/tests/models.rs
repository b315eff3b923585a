mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upar_core::data::{generate_synthetic, Dataset};
use upar_core::model::{
    train_logistic, train_logistic_with_history, train_mlp, Activation, MlpModel, MlpTraining,
    Model,
};
use upar_core::Predictor;

fn accuracy<P: Predictor>(m: &P, d: &Dataset) -> f64 {
    let hits = d
        .rows
        .iter()
        .zip(&d.labels)
        .filter(|(x, &y)| m.predict_label(x).unwrap() == y)
        .count();
    hits as f64 / d.len() as f64
}

/// Central differences of predict_proba.
fn numeric_gradient<P: Predictor>(m: &P, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (m.predict_proba(&up).unwrap() - m.predict_proba(&down).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn mlp_sensitivity_matches_finite_differences() {
    for activation in [Activation::Tanh, Activation::Relu] {
        let m = MlpModel::random(&[5, 18, 9, 3, 1], activation, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            if m.kink_distance(&x).unwrap() < 1e-3 {
                continue;
            }
            let err = relative_error(&m.sensitivity(&x).unwrap(), &numeric_gradient(&m, &x, 1e-5));
            assert!(err <= 1e-4, "{activation:?} at {x:?}: {err}");
            checked += 1;
        }
    }
}

#[test]
fn linear_sensitivity_matches_finite_differences_and_signs() {
    let m = upar_core::LinearModel::new(vec![2.0, -3.0, 0.5], 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = m.sensitivity(&x).unwrap();
        assert!(relative_error(&s, &numeric_gradient(&m, &x, 1e-5)) <= 1e-4);
        assert!(s[0] > 0.0 && s[1] < 0.0 && s[2] > 0.0);
    }
}

#[test]
fn label_flips_exactly_at_one_half() {
    let m = upar_core::LinearModel::new(vec![1.0], 0.0);
    assert_eq!(m.predict_proba(&[0.0]).unwrap(), 0.5);
    assert_eq!(m.predict_label(&[0.0]).unwrap(), 1);
    assert_eq!(m.predict_label(&[-1e-12]).unwrap(), -1);
}

#[test]
fn logistic_fits_separable_data() {
    let f = common::mixed(600, 5);
    assert!(accuracy(&f.model, &f.data) >= 0.95);
}

#[test]
fn logistic_loss_never_increases() {
    let f = common::two_feature(300, 2);
    let (_, history) = train_logistic_with_history(&f.data, 1e-3, 500, 10.0, 0).unwrap();
    for w in history.windows(2) {
        assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn logistic_is_deterministic() {
    let f = common::two_feature(200, 2);
    let a = train_logistic(&f.data, 1e-3, 300, 1.0, 17).unwrap();
    let b = train_logistic(&f.data, 1e-3, 300, 1.0, 17).unwrap();
    assert_eq!(a, b);
}

#[test]
fn heavy_regularisation_predicts_the_base_rate() {
    let f = common::two_feature(400, 2);
    // keep every positive and a third of the negatives
    let mut data = f.data.clone();
    let keep: Vec<usize> = (0..data.len())
        .filter(|&k| data.labels[k] == 1 || k % 3 == 0)
        .collect();
    data.rows = keep.iter().map(|&k| f.data.rows[k].clone()).collect();
    data.labels = keep.iter().map(|&k| f.data.labels[k]).collect();
    let base = data.labels.iter().filter(|&&y| y == 1).count() as f64 / data.len() as f64;
    let m = train_logistic(&data, 1e6, 3000, 1.0, 0).unwrap();
    assert!(m.weights.iter().all(|w| w.abs() < 1e-5));
    for x in data.rows.iter().take(20) {
        assert!((m.predict_proba(x).unwrap() - base).abs() < 1e-3);
    }
}

#[test]
fn training_rejects_single_class_data() {
    let f = common::two_feature(100, 2);
    let mut d = f.data.clone();
    d.labels = vec![1; d.len()];
    assert!(train_logistic(&d, 0.0, 10, 1.0, 0).is_err());
    assert!(train_mlp(&d, &MlpTraining::default()).is_err());
}

#[test]
fn mlp_training_is_deterministic_and_learns() {
    let f = common::two_feature(300, 4);
    let cfg = MlpTraining {
        hidden: vec![8, 4],
        activation: Activation::Tanh,
        epochs: 300,
        seed: 3,
        ..Default::default()
    };
    let a = train_mlp(&f.data, &cfg).unwrap();
    let b = train_mlp(&f.data, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(accuracy(&a, &f.data) >= 0.9, "{}", accuracy(&a, &f.data));
}

#[test]
fn saved_model_predicts_identically() {
    let f = common::mixed(200, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let cfg = MlpTraining {
        epochs: 20,
        ..Default::default()
    };
    let model = Model::Mlp(train_mlp(&f.data, &cfg).unwrap());
    model.save(&path).unwrap();
    let back = Model::load(&path, &f.schema).unwrap();
    let check = generate_synthetic(99, 100, &f.schema, 0.0).unwrap();
    for x in &check.rows {
        assert_eq!(
            model.predict_proba(x).unwrap().to_bits(),
            back.predict_proba(x).unwrap().to_bits()
        );
    }
    let text = std::fs::read_to_string(&path).unwrap();
    model.save(&path).unwrap();
    assert_eq!(text, std::fs::read_to_string(&path).unwrap());
}

#[test]
fn loading_rejects_a_model_for_another_schema() {
    let f = common::mixed(100, 8);
    let other = common::two_feature(100, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Model::Linear(other.model.clone()).save(&path).unwrap();
    assert!(Model::load(&path, &f.schema).is_err());
}
