mod common;

use upar_core::cost::total_cost;
use upar_core::data::{FeatureKind, Monotonicity};
use upar_core::engine::{
    cost_correction, generate_recourse, generate_recourse_traced, individual_seed, EngineConfig,
};
use upar_core::metrics::constraint_violations;
use upar_core::preferences::{Bounds, RankOrder, ResolvedProfile};
use upar_core::Predictor;

fn mixed_profile(f: &common::Fixture) -> upar_core::PreferenceProfile {
    let mut p = f.profile(&[("duration", 0.2), ("amount", 0.5), ("savings", 0.3)]);
    p.bounds.insert(
        "amount".into(),
        Bounds {
            lower: 0.0,
            upper: 18000.0,
        },
    );
    p
}

#[test]
fn results_are_valid_bounded_and_respect_actionability() {
    let f = common::mixed(800, 21);
    let p = mixed_profile(&f);
    let resolved = ResolvedProfile::resolve(&p, &f.schema).unwrap();
    let cfg = EngineConfig::default();
    let mut valid = 0;
    let negatives = f.negatives(150);
    for (k, x) in negatives.iter().enumerate() {
        if x[1] > 18000.0 {
            continue;
        }
        let r =
            generate_recourse(&f.model, x, &p, &f.q, &cfg, individual_seed(3, k as u64)).unwrap();
        assert_eq!(constraint_violations(&r, &f.schema), 0);
        assert_eq!(r.final_action[f.schema.index_of("age").unwrap()], 0.0);
        if r.valid {
            valid += 1;
            assert_eq!(f.model.predict_label(&r.counterfactual()).unwrap(), 1);
            assert!(r.total_cost_after <= r.total_cost_before + 1e-12);
        }
        for (i, v) in r.counterfactual().iter().enumerate() {
            assert!(*v >= resolved.lower[i] - 1e-9 && *v <= resolved.upper[i] + 1e-9);
            if f.schema.features[i].is_categorical() {
                assert!(f.schema.features[i].is_allowed_value(*v));
            }
        }
    }
    assert!(valid > 100, "{valid}");
}

#[test]
fn trajectories_are_connected_and_stop_at_the_first_success() {
    let f = common::mixed(600, 4);
    let p = mixed_profile(&f);
    let resolved = ResolvedProfile::resolve(&p, &f.schema).unwrap();
    let cfg = EngineConfig::default();
    for (k, x) in f.negatives(60).iter().enumerate() {
        if x[1] > 18000.0 {
            continue;
        }
        let (_, t) = generate_recourse_traced(&f.model, x, &p, &f.q, &cfg, k as u64).unwrap();
        for s in 1..=t.steps() {
            let (prev, cur) = (t.candidate(s - 1), t.candidate(s));
            let rec = &t.records[s - 1];
            for i in 0..x.len() {
                let diff = cur[i] - prev[i];
                if !rec.acted[i] {
                    assert_eq!(diff, 0.0);
                    continue;
                }
                match resolved.kinds[i] {
                    FeatureKind::Continuous => {
                        assert!(
                            (diff.abs() - resolved.step[i]).abs()
                                < 1e-9 * resolved.step[i].max(1.0)
                        )
                    }
                    FeatureKind::Categorical => {
                        let c = &resolved.candidates[i];
                        let a = c.iter().position(|v| *v == x[i] + prev[i]).unwrap();
                        let b = c.iter().position(|v| *v == x[i] + cur[i]).unwrap();
                        assert_eq!(a.abs_diff(b), 1);
                    }
                }
            }
        }
        let first = t
            .records
            .iter()
            .position(|r| r.prediction >= 0.5)
            .map(|i| i + 1);
        assert_eq!(t.t_hat, first);
    }
}

#[test]
fn categorical_features_act_in_rank_order() {
    let f = common::mixed(600, 8);
    let cfg = EngineConfig::default();
    for order in [RankOrder::Ascending, RankOrder::Descending] {
        let mut p = mixed_profile(&f);
        p.rank_order = order;
        p.ranking.insert("guarantor".into(), 1);
        p.ranking.insert("coapplicant".into(), 2);
        let resolved = ResolvedProfile::resolve(&p, &f.schema).unwrap();
        for (k, x) in f.negatives(80).iter().enumerate() {
            if x[1] > 18000.0 {
                continue;
            }
            let (_, t) = generate_recourse_traced(&f.model, x, &p, &f.q, &cfg, k as u64).unwrap();
            // whenever a later-ranked feature first acts, every earlier-ranked
            // one has either acted already or cannot move
            let mut acted = vec![false; x.len()];
            for rec in &t.records {
                for (pos, &j) in resolved.rank_sequence.iter().enumerate() {
                    if rec.acted[j] && !acted[j] {
                        for &e in &resolved.rank_sequence[..pos] {
                            assert!(acted[e] || rec.directions[e] == 0 || rec.acted[e]);
                        }
                    }
                }
                for (a, r) in acted.iter_mut().zip(&rec.acted) {
                    *a |= r;
                }
            }
        }
    }
}

#[test]
fn monotone_features_only_move_their_way() {
    let mut f = common::mixed(600, 12);
    f.schema.features[2].monotonicity = Monotonicity::NonDecreasing;
    f.q.schema = f.schema.clone();
    let p = mixed_profile(&f);
    for (k, x) in f.negatives(80).iter().enumerate() {
        if x[1] > 18000.0 {
            continue;
        }
        let r =
            generate_recourse(&f.model, x, &p, &f.q, &EngineConfig::default(), k as u64).unwrap();
        assert!(r.final_action[2] >= 0.0);
    }
}

#[test]
fn correction_never_costs_more() {
    let f = common::mixed(600, 30);
    let p = mixed_profile(&f);
    let cfg = EngineConfig::default();
    let mut fired = 0;
    for (k, x) in f.negatives(150).iter().enumerate() {
        if x[1] > 18000.0 {
            continue;
        }
        let (r, t) = generate_recourse_traced(&f.model, x, &p, &f.q, &cfg, k as u64).unwrap();
        if t.t_hat.is_none() {
            continue;
        }
        let c = cost_correction(&f.model, x, &t, &f.q, &cfg).unwrap();
        let before = total_cost(&f.q, x, &t.candidate(t.t_hat.unwrap()), &cfg.cost).unwrap();
        let after = total_cost(&f.q, x, &c.action, &cfg.cost).unwrap();
        assert!(after <= before + 1e-12);
        assert!(r.valid);
        if c.applied {
            fired += 1;
        }
    }
    assert!(fired > 0);
}

#[test]
fn same_seed_same_result() {
    let f = common::mixed(400, 2);
    let p = mixed_profile(&f);
    let x = f.negatives(1).remove(0);
    let a = generate_recourse(&f.model, &x, &p, &f.q, &EngineConfig::default(), 77).unwrap();
    let b = generate_recourse(&f.model, &x, &p, &f.q, &EngineConfig::default(), 77).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn separable_linear_population_almost_always_gets_recourse() {
    let f = common::two_feature(1000, 13);
    let p = f.profile(&[("a", 0.5), ("b", 0.5)]);
    let negs = f.negatives(200);
    assert_eq!(negs.len(), 200);
    let ok = negs
        .iter()
        .enumerate()
        .filter(|(k, x)| {
            generate_recourse(&f.model, x, &p, &f.q, &EngineConfig::default(), *k as u64)
                .unwrap()
                .valid
        })
        .count();
    assert!(ok as f64 / 200.0 >= 0.95, "{ok}");
}
