use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerank_autodiff::{ParamStore, Tape};
use steerank_core::actor::{
    local_context, step_distribution, Constraints, FixedInsertion, Mode, Policy, CONTEXT_WIDTH,
};
use steerank_core::data::{ContentType, Item};
use steerank_core::instance::Instance;
use steerank_testkit::checks::{self, PolicyReport};
use steerank_testkit::{fixtures, random};

const DIM: usize = 3;

fn context_of(spec: &steerank_core::actor::ActorSpec, params: &ParamStore, inst: &Instance) -> Vec<f64> {
    let tape = Tape::new();
    let vars = tape.bind(params);
    let enc = spec.encode(&tape, &vars, inst).unwrap();
    let out = tape.value(enc.context).data().to_vec();
    out
}

fn permuted(inst: &Instance, rng: &mut impl Rng) -> Instance {
    let mut cands = inst.candidates.clone();
    cands.shuffle(rng);
    Instance::new(inst.user.clone(), cands).unwrap()
}

// plain-loop two-layer tanh network, weights stored [in, out]
fn dense(params: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for k in 0..2 {
        let w = params.get(&format!("{prefix}/l{k}/w")).unwrap();
        let b = params.get(&format!("{prefix}/l{k}/b")).unwrap();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        assert_eq!(rows, h.len());
        h = (0..cols)
            .map(|j| {
                let s: f64 = (0..rows).map(|i| h[i] * w.data()[i * cols + j]).sum();
                (s + b.data()[j]).tanh()
            })
            .collect();
    }
    h
}

#[test]
fn context_matches_hand_evaluated_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = fixtures::actor_spec(DIM, 2);
    let params = fixtures::actor_params(&spec, 4);
    let body = "actor/theta_wbar";
    for m in [1, 2, 5] {
        let inst = random::instance(&mut rng, m, DIM);
        let mut pooled = vec![0.0; spec.embed];
        for r in 0..m {
            for (p, v) in pooled.iter_mut().zip(dense(&params, &format!("{body}/mlp1"), inst.rows.row(r))) {
                *p += v;
            }
        }
        let expected = dense(&params, &format!("{body}/mlp2"), &pooled);
        let got = context_of(&spec, &params, &inst);
        assert_eq!(got.len(), spec.state);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "m={m}: {g} vs {e}");
        }
    }
}

#[test]
fn context_is_bit_identical_under_candidate_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = fixtures::actor_spec(DIM, 3);
    let params = fixtures::actor_params(&spec, 11);
    for _ in 0..200 {
        let m = rng.random_range(3..12);
        let inst = random::instance(&mut rng, m, DIM);
        let base: Vec<u64> = context_of(&spec, &params, &inst).iter().map(|v| v.to_bits()).collect();
        for _ in 0..3 {
            let other = permuted(&inst, &mut rng);
            let bits: Vec<u64> = context_of(&spec, &params, &other).iter().map(|v| v.to_bits()).collect();
            assert_eq!(base, bits);
        }
    }
}

#[test]
fn fixed_insertions_are_always_honoured() {
    let report = checks::constraint_soundness(10_000, 23).unwrap();
    eprintln!("{report:?}");
    assert!(report.fixed_slots > 5_000);
    assert!(report.passed(), "{report:?}");
}

fn assert_policy(report: &PolicyReport) {
    eprintln!(
        "{} lists, total probability {:.12}, max deviation {:.5}",
        report.lists.len(),
        report.total_probability,
        report.max_abs_dev
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn sampled_lists_follow_chained_step_probabilities() {
    let r = checks::policy_distribution(3, 2, 100_000, 5).unwrap();
    assert_eq!(r.lists.len(), 6);
    assert_policy(&r);
    let r = checks::policy_distribution(3, 1, 100_000, 6).unwrap();
    assert_eq!(r.lists.len(), 3);
    assert_policy(&r);
}

#[test]
fn sampled_lists_follow_chained_step_probabilities_m4_n2() {
    let r = checks::policy_distribution(4, 2, 200_000, 7).unwrap();
    assert_eq!(r.lists.len(), 12);
    assert_policy(&r);
}

fn step_probabilities(
    spec: &steerank_core::actor::ActorSpec,
    params: &ParamStore,
    inst: &Instance,
    c: &Constraints,
    seed: u64,
) -> Vec<Vec<f64>> {
    // full distribution at every step along a sampled rollout
    let tape = Tape::new();
    let vars = tape.bind(params);
    let enc = spec.encode(&tape, &vars, inst).unwrap();
    let mut state = spec.init_state(&tape, &vars, &enc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..spec.n {
        let allowed = c.allowed(state.step, &state.selected);
        let logits = spec.scores(&tape, &vars, inst, &enc, &state).unwrap();
        out.push(step_distribution(tape.value(logits).data(), &allowed).unwrap());
        let (_, _, _, next) = spec
            .decode_step(&tape, &vars, inst, &enc, &state, c, &mut Policy::Sample(&mut rng))
            .unwrap();
        state = next;
    }
    out
}

#[test]
fn masked_steps_normalise_and_respect_the_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = fixtures::actor_spec(DIM, 4);
    let params = fixtures::actor_params(&spec, 31);
    for case in 0..100 {
        let m = rng.random_range(4..9);
        let inst = random::instance(&mut rng, m, DIM);
        let c = Constraints::resolve(
            &[FixedInsertion {
                position: 3,
                id: inst.candidates[case % m].id,
            }],
            &inst.candidates,
            4,
        )
        .unwrap();
        let list = spec.generate_list(&params, &inst, &c, Mode::Sample, &mut rng).unwrap();
        let dists = step_probabilities(&spec, &params, &inst, &c, case as u64);
        let replay = spec.score_list(&params, &inst, &c, &list.indices).unwrap();
        assert_eq!(replay.indices, list.indices);
        for (step, p) in dists.iter().enumerate() {
            let total: f64 = p.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "step {step} sums to {total}");
        }
        // the forced step is certain
        assert_eq!(list.indices[2], case % m);
        assert_eq!(list.probs[2], 1.0);
        // chosen items carry zero mass afterwards, reserved ones elsewhere
        for (step, p) in replay_distributions(&spec, &params, &inst, &c, &list.indices).iter().enumerate() {
            for &earlier in &list.indices[..step] {
                assert_eq!(p[earlier], 0.0);
            }
            if step != 2 {
                assert_eq!(p[case % m], 0.0, "reserved item leaked at step {step}");
            }
        }
    }
}

fn replay_distributions(
    spec: &steerank_core::actor::ActorSpec,
    params: &ParamStore,
    inst: &Instance,
    c: &Constraints,
    list: &[usize],
) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let vars = tape.bind(params);
    let enc = spec.encode(&tape, &vars, inst).unwrap();
    let mut state = spec.init_state(&tape, &vars, &enc).unwrap();
    let mut out = Vec::new();
    for _ in 0..spec.n {
        let allowed = c.allowed(state.step, &state.selected);
        let logits = spec.scores(&tape, &vars, inst, &enc, &state).unwrap();
        out.push(step_distribution(tape.value(logits).data(), &allowed).unwrap());
        let (_, _, _, next) = spec
            .decode_step(&tape, &vars, inst, &enc, &state, c, &mut Policy::Forced(list))
            .unwrap();
        state = next;
    }
    out
}

#[test]
fn greedy_generation_ignores_the_rng() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = fixtures::actor_spec(DIM, 3);
    let params = fixtures::actor_params(&spec, 2);
    for _ in 0..50 {
        let inst = random::instance(&mut rng, 7, DIM);
        let c = Constraints::none(7, 3);
        let a = spec
            .generate_list(&params, &inst, &c, Mode::Greedy, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let b = spec
            .generate_list(&params, &inst, &c, Mode::Greedy, &mut ChaCha8Rng::seed_from_u64(99))
            .unwrap();
        assert_eq!(a, b);
        // each greedy pick is the mode of its step distribution
        for (step, p) in replay_distributions(&spec, &params, &inst, &c, &a.indices).iter().enumerate() {
            let best = p.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(p[a.indices[step]], best);
        }
    }
}

#[test]
fn full_length_lists_are_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for m in 1..=5 {
        let spec = fixtures::actor_spec(DIM, m);
        let params = fixtures::actor_params(&spec, m as u64);
        for _ in 0..20 {
            let inst = random::instance(&mut rng, m, DIM);
            let list = spec
                .generate_list(&params, &inst, &Constraints::none(m, m), Mode::Sample, &mut rng)
                .unwrap();
            let mut sorted = list.indices.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..m).collect::<Vec<_>>());
            assert_eq!(*list.probs.last().unwrap(), 1.0);
        }
    }
}

#[test]
fn single_slot_with_a_fixed_item_has_zero_log_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = fixtures::actor_spec(DIM, 1);
    let params = fixtures::actor_params(&spec, 3);
    let inst = random::instance(&mut rng, 5, DIM);
    let id = inst.candidates[3].id;
    let c = Constraints::resolve(&[FixedInsertion { position: 1, id }], &inst.candidates, 1).unwrap();
    let list = spec.generate_list(&params, &inst, &c, Mode::Sample, &mut rng).unwrap();
    assert_eq!(list.indices, vec![3]);
    assert_eq!(list.log_prob(), 0.0);
}

#[test]
fn infeasible_shapes_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = fixtures::actor_spec(DIM, 4);
    let params = fixtures::actor_params(&spec, 1);
    let inst = random::instance(&mut rng, 3, DIM);
    assert!(Constraints::resolve(&[], &inst.candidates, 4).is_err());
    let wrong = Constraints::none(3, 4);
    assert!(spec.generate_list(&params, &inst, &wrong, Mode::Greedy, &mut rng).is_err());
    let narrow = random::instance(&mut rng, 6, DIM + 1);
    assert!(spec
        .generate_list(&params, &narrow, &Constraints::none(6, 4), Mode::Greedy, &mut rng)
        .is_err());
}

fn shop(id: u64, seller: u32, category: u32, prio: u32, cold: bool, new: bool) -> Item {
    Item {
        id,
        seller,
        category,
        ctype: ContentType::Video,
        prio,
        cold,
        new,
        ctr: 0.2,
        features: vec![0.0; DIM],
    }
}

#[test]
fn local_context_reference_values() {
    let prefix = [
        shop(1, 7, 2, 0, false, false),
        shop(2, 7, 3, 1, true, false),
        shop(3, 4, 2, 0, false, true),
        shop(4, 7, 2, 2, false, false),
    ];
    let refs: Vec<&Item> = prefix.iter().collect();
    let target = shop(5, 7, 2, 1, true, true);
    let expected: [f64; CONTEXT_WIDTH] = [3.0, 1.0, 2.0, 1.0, 0.4, 1.0, 1.0, 1.0];
    assert_eq!(local_context(&refs, &target, 2, 10), expected);
    let wide = local_context(&refs, &target, 10, 10);
    assert_eq!(&wide[..3], &[3.0, 3.0, 3.0]);
    let other = shop(6, 1, 9, 0, false, false);
    assert_eq!(local_context(&refs, &other, 2, 4), [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(local_context(&refs[..0], &target, 0, 10)[..5], [0.0; 5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_lists_are_distinct_and_sized(seed in 0u64..10_000, n in 1usize..5, extra in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = fixtures::actor_spec(DIM, n);
        let params = fixtures::actor_params(&spec, seed);
        let inst = random::instance(&mut rng, n + extra, DIM);
        let list = spec.generate_list(&params, &inst, &Constraints::none(n + extra, n), Mode::Sample, &mut rng).unwrap();
        prop_assert_eq!(list.indices.len(), n);
        let mut s = list.indices.clone();
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), n);
        prop_assert!(list.probs.iter().all(|&p| p > 0.0 && p <= 1.0));
    }

    #[test]
    fn step_distribution_is_a_masked_simplex(
        logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
        mask_bits in any::<u16>(),
    ) {
        let mut allowed: Vec<bool> = (0..logits.len()).map(|i| mask_bits >> i & 1 == 1).collect();
        if !allowed.iter().any(|&a| a) {
            allowed[0] = true;
        }
        let p = step_distribution(&logits, &allowed).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pi, a) in p.iter().zip(&allowed) {
            if !a {
                prop_assert_eq!(*pi, 0.0);
            } else {
                prop_assert!(*pi > 0.0);
            }
        }
    }
}
