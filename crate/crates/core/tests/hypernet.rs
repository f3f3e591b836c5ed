use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steerank_autodiff::{ParamStore, Tape};
use steerank_core::actor::{step_distribution, Constraints, Policy};
use steerank_core::config::{business_utilities, PreferenceSampling};
use steerank_core::hypernet::{assemble, split_store};
use steerank_core::model::Model;
use steerank_testkit::{fixtures, random};

fn model() -> Model {
    Model::init(fixtures::tiny_config(6, 3)).unwrap()
}

fn business_model() -> Model {
    let mut cfg = fixtures::tiny_config(6, 3);
    cfg.utilities = business_utilities();
    cfg.preference = PreferenceSampling::Independent;
    Model::init(cfg).unwrap()
}

fn grid(caps: &[f64], points: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for &cap in caps {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..points).map(move |k| {
                    let mut v = w.clone();
                    v.push(cap * k as f64 / (points - 1) as f64);
                    v
                })
            })
            .collect();
    }
    out
}

#[test]
fn generated_head_has_the_scoring_head_shapes() {
    for m in [model(), business_model()] {
        let head = m.hyper.generate(&m.params, &m.split, &vec![0.3; m.caps().len()]).unwrap();
        let expected = m.actor.head_shapes();
        assert_eq!(head.len(), expected.len());
        for (name, shape) in &expected {
            assert_eq!(head.get(name).unwrap().shape(), shape.as_slice());
        }
        assert_eq!(m.hyper.output, m.actor.mlp3().num_params());
        assert_eq!(m.hyper.n_utilities, m.config.utilities.len());
    }
}

#[test]
fn split_partitions_the_actor() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let full = m.actor.init_body(&mut rng).unwrap().merged(&m.actor.init_head(&mut rng).unwrap()).unwrap();
    let mut names: Vec<&str> = m.split.head.iter().chain(&m.split.body).map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    let mut actual: Vec<&str> = full.names().collect();
    actual.sort_unstable();
    assert_eq!(names, actual);
    m.split.validate().unwrap();
    let mut overlapping = m.split.clone();
    overlapping.body.push(overlapping.head[0].clone());
    assert!(overlapping.validate().is_err());
}

#[test]
fn generation_is_deterministic_and_checks_its_input() {
    let m = model();
    let w = [0.4, 0.7];
    let a = m.hyper.generate(&m.params, &m.split, &w).unwrap();
    let b = m.hyper.generate(&m.params, &m.split, &w).unwrap();
    for (name, t) in a.iter() {
        assert_eq!(t, b.get(name).unwrap());
    }
    assert!(m.hyper.generate(&m.params, &m.split, &[0.4]).is_err());
    assert!(m.hyper.generate(&m.params, &m.split, &[0.4, f64::NAN]).is_err());
    assert!(m.actor_params(&[0.4, 1.5]).is_err());
}

#[test]
fn untrained_heads_start_near_a_shared_default() {
    let m = model();
    let a = m.hyper.generate(&m.params, &m.split, &[0.0, 0.0]).unwrap();
    let b = m.hyper.generate(&m.params, &m.split, &[1.0, 1.0]).unwrap();
    let mut differs = false;
    for (name, t) in a.iter() {
        let u = b.get(name).unwrap();
        for (x, y) in t.data().iter().zip(u.data()) {
            differs |= x != y;
            // |Δ| is bounded by hidden width × init scale × max tanh swing
            assert!((x - y).abs() <= 2.0 * m.hyper.hidden as f64 * m.hyper.init_scale);
        }
    }
    assert!(differs);
}

#[test]
fn every_grid_preference_yields_valid_step_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for m in [model(), business_model()] {
        let insts: Vec<_> = (0..3).map(|_| random::instance(&mut rng, 6, 3)).collect();
        for w in grid(&m.caps(), 5) {
            let params = m.actor_params(&w).unwrap();
            assert!(params.first_non_finite().is_none());
            for inst in &insts {
                let tape = Tape::new();
                let vars = tape.bind(&params);
                let enc = m.actor.encode(&tape, &vars, inst).unwrap();
                let mut state = m.actor.init_state(&tape, &vars, &enc).unwrap();
                let c = Constraints::none(6, 3);
                for _ in 0..3 {
                    let logits = m.actor.scores(&tape, &vars, inst, &enc, &state).unwrap();
                    let p = step_distribution(tape.value(logits).data(), &c.allowed(state.step, &state.selected)).unwrap();
                    assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    state = m
                        .actor
                        .decode_step(&tape, &vars, inst, &enc, &state, &c, &mut Policy::Greedy)
                        .unwrap()
                        .3;
                }
            }
        }
    }
}

#[test]
fn assemble_shares_the_body_and_round_trips() {
    let m = model();
    let head = m.hyper.generate(&m.params, &m.split, &[0.2, 0.9]).unwrap();
    let body = m.body();
    let actor = assemble(&head, &body, &m.split).unwrap();
    for (name, t) in body.iter_shared() {
        assert!(Arc::ptr_eq(t, actor.get_shared(name).unwrap()), "{name} was copied");
    }
    let (h2, b2) = split_store(&actor, &m.split).unwrap();
    for (orig, back) in [(&head, &h2), (&body, &b2)] {
        assert_eq!(orig.len(), back.len());
        for (name, t) in orig.iter() {
            assert_eq!(t, back.get(name).unwrap());
        }
    }
}

#[test]
fn assemble_rejects_missing_or_overlapping_tensors() {
    let m = model();
    let head = m.hyper.generate(&m.params, &m.split, &[0.2, 0.9]).unwrap();
    let body = m.body();
    let mut partial = head.clone();
    partial.remove(&m.split.head[2].0).unwrap();
    assert!(assemble(&partial, &body, &m.split).is_err());
    let mut thin = body.clone();
    thin.remove(&m.split.body[0].0).unwrap();
    assert!(assemble(&head, &thin, &m.split).is_err());
    let mut greedy_body: ParamStore = body.clone();
    let (name, _) = &m.split.head[0];
    greedy_body.insert(name.clone(), head.get(name).unwrap().clone()).unwrap();
    assert!(assemble(&head, &greedy_body, &m.split).is_err());
}
