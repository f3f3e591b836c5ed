//! Reusable checks behind the acceptance criteria. Each returns the measured
//! quantities; `passed()` applies the stated tolerance.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerank_autodiff::gradcheck::{self, GradCheckReport};
use steerank_autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var, VarMap};
use steerank_core::actor::{ActorSpec, Constraints, FixedInsertion, Mode, Policy};
use steerank_core::config::{PreferenceSampling, RunConfig};
use steerank_core::data::{GroupField, Item};
use steerank_core::datagen;
use steerank_core::evaluator;
use steerank_core::instance::Instance;
use steerank_core::metrics;
use steerank_core::model::Model;
use steerank_core::training;
use steerank_core::utilities::{self, PageRef, UtilityKind, UtilitySpec};
use steerank_core::Result;

use crate::fixtures;
use crate::oracle;
use crate::random;

// ---------------------------------------------------------------------------
// gradients

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < GRAD_TOL
    }
}

/// Random instance with a random logged list and click labels.
pub fn labelled_instance(rng: &mut impl Rng, m: usize, n: usize, dim: usize) -> Instance {
    let mut inst = random::instance(rng, m, dim);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    inst.exposure = idx;
    inst.clicks = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
    inst
}

/// `−(1/B) Σ_p A_p Σ_n log a` along teacher-forced lists.
pub fn forced_actor_loss(
    tape: &Tape,
    vars: &VarMap,
    actor: &ActorSpec,
    insts: &[Instance],
    lists: &[Vec<usize>],
    advantages: &[f64],
) -> Result<Var> {
    let mut terms = Vec::with_capacity(insts.len());
    for (inst, list) in insts.iter().zip(lists) {
        let c = Constraints::none(inst.m(), actor.n);
        let (_, lp) = actor.rollout(tape, vars, inst, &c, &mut Policy::Forced(list))?;
        terms.push(tape.reshape(lp, &[1])?);
    }
    let lp = tape.concat(&terms)?;
    let adv = tape.constant(Tensor::vector(advantages.to_vec()));
    Ok(tape.scale(tape.dot(adv, lp)?, -1.0 / insts.len() as f64))
}

fn fd_check(
    params: &ParamStore,
    select: impl Fn(&str) -> bool,
    build: impl Fn(&Tape, &ParamStore) -> Result<Var>,
) -> Result<GradCheckReport> {
    let tape = Tape::new();
    let loss = build(&tape, params)?;
    let analytic = tape.grad(loss)?;
    Ok(gradcheck::check(params, &analytic, GRAD_EPS, GRAD_FLOOR, select, |p| {
        let t = Tape::new();
        let l = build(&t, p).map_err(|e| steerank_autodiff::DiffError::Shape(e.to_string()))?;
        Ok(t.scalar(l))
    })?)
}

/// Central-difference checks of every evaluator parameter, every actor
/// parameter, and φ through the generated head.
pub fn gradient_integrity(seed: u64) -> Result<Vec<GradCase>> {
    let (m, n, dim) = (5, 3, 3);
    let mut cfg = fixtures::tiny_config(m, n);
    cfg.seed = seed;
    let model = Model::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let insts: Vec<Instance> = (0..3).map(|_| labelled_instance(&mut rng, m, n, dim)).collect();
    let lists: Vec<Vec<usize>> = insts.iter().map(|i| i.exposure.clone()).collect();
    let advantages = [0.7, -0.4, 0.25];
    let w = [0.3, 0.7];
    let mut out = Vec::new();

    let eval_params = model.evaluator_params();
    let report = fd_check(&eval_params, |_| true, |tape, p| {
        let vars = tape.bind(p);
        let batch: Vec<&Instance> = insts.iter().collect();
        model.evaluator.loss(tape, &vars, &batch)
    })?;
    out.push(GradCase {
        name: "evaluator",
        report,
    });

    let actor_params = model.actor_params(&w)?;
    let report = fd_check(&actor_params, |_| true, |tape, p| {
        let vars = tape.bind(p);
        forced_actor_loss(tape, &vars, &model.actor, &insts, &lists, &advantages)
    })?;
    out.push(GradCase { name: "actor", report });

    let trainable = model.phi().merged(&model.body())?;
    let report = fd_check(
        &trainable,
        |name| name.starts_with(steerank_core::hypernet::PREFIX),
        |tape, p| {
            let mut vars = tape.bind(p);
            model.hyper.generate_on_tape(tape, &mut vars, &model.split, &w)?;
            forced_actor_loss(tape, &vars, &model.actor, &insts, &lists, &advantages)
        },
    )?;
    out.push(GradCase {
        name: "hypernetwork",
        report,
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// oracle equivalence

#[derive(Clone, Debug, Default)]
pub struct OracleReport {
    pub cases: usize,
    pub comparisons: usize,
    pub mismatches: Vec<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.comparisons > 0 && self.mismatches.is_empty()
    }

    fn compare(&mut self, what: &str, got: f64, want: f64) {
        self.comparisons += 1;
        if got.to_bits() != want.to_bits() {
            self.mismatches.push(format!("case {}: {what}: got {got:e}, oracle {want:e}", self.cases));
        }
    }
}

fn oracle_member(spec: &UtilitySpec, it: &Item) -> bool {
    it.group(spec.group_field.unwrap()) == spec.group_value.unwrap_or(1)
}

fn oracle_priority(spec: &UtilitySpec, it: &Item) -> i64 {
    let label = it.group(spec.group_field.unwrap());
    match &spec.priority_map {
        None => label,
        Some(map) => *map.get(&label.to_string()).unwrap_or(&0),
    }
}

/// Reference value of one utility on a batch.
pub fn oracle_utility(spec: &UtilitySpec, batch: &random::Batch) -> f64 {
    let pages = batch.pages();
    if spec.kind == UtilityKind::Engagement {
        return oracle::engagement(&batch.predictions);
    }
    let members: Vec<Vec<bool>> = pages.iter().map(|p| p.iter().map(|it| oracle_member(spec, it)).collect()).collect();
    let t_e = spec.t_e.unwrap_or(0.0);
    let t_p = spec.t_p.unwrap_or(1.0);
    let field = spec.group_field.unwrap();
    match spec.kind {
        UtilityKind::Strict => oracle::strict(&members, t_e),
        UtilityKind::Gated => oracle::gated(&members, t_e),
        UtilityKind::Positional => oracle::positional(&members, t_e, t_p),
        UtilityKind::Diversity => {
            let labels: Vec<Vec<i64>> = pages.iter().map(|p| p.iter().map(|it| it.group(field)).collect()).collect();
            oracle::diversity(&labels, spec.window)
        }
        UtilityKind::Ordering => {
            let pr: Vec<Vec<i64>> = pages.iter().map(|p| p.iter().map(|it| oracle_priority(spec, it)).collect()).collect();
            oracle::ordering(&pr)
        }
        UtilityKind::Engagement => unreachable!("handled above"),
        UtilityKind::IntentDiversity => {
            let sat = oracle::relative_satisfaction(&batch.predictions);
            let mut total = 0.0;
            for ((p, pool), s) in pages.iter().zip(&batch.pools).zip(&sat) {
                let intents: Vec<i64> = p.iter().map(|it| it.group(field)).collect();
                let pool_intents: Vec<i64> = pool.iter().map(|it| it.group(field)).collect();
                total += oracle::err_ia(s, &intents, &pool_intents, p.len());
            }
            total / pages.len() as f64
        }
    }
}

/// Every utility kind and every metric on `cases` random batches and lists,
/// compared bit for bit.
pub fn oracle_equivalence(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::default();
    for case in 0..cases {
        report.cases = case;
        let b = random::batch(&mut rng, 4, 2, 5);
        let pages = b.pages();
        let refs: Vec<PageRef> = pages
            .iter()
            .zip(&b.pools)
            .map(|(items, pool)| PageRef { items, pool })
            .collect();
        for kind in random::KINDS {
            let spec = random::spec(&mut rng, kind);
            let got = utilities::batch_value(&spec, &refs, Some(&b.predictions))?;
            report.compare(&format!("{kind:?}"), got, oracle_utility(&spec, &b));
        }

        let j = random::judged(&mut rng, 6);
        let k = rng.random_range(1..=j.grades.len() + 1);
        let list = metrics::JudgedList::new(j.grades.clone(), j.features.clone(), j.intents.clone())
            .with_pool(j.pool_grades.clone(), j.pool_intents.clone());
        report.compare("MAP", metrics::map_at_k(&list, k), oracle::map_at_k(&j.grades, &j.pool_grades, k));
        report.compare("NDCG", metrics::ndcg_at_k(&list, k), oracle::ndcg_at_k(&j.grades, &j.pool_grades, k));
        let k2 = k.max(2);
        report.compare("ILAD", metrics::ilad_at_k(&list, k2)?, oracle::ilad_at_k(&j.features, k2));
        report.compare(
            "ERR_IA",
            metrics::err_ia_at_k(&list, k),
            oracle::err_ia(&oracle::grade_satisfaction(&j.grades), &j.intents, &j.pool_intents, k),
        );
    }
    report.cases = cases;
    Ok(report)
}

// ---------------------------------------------------------------------------
// constraint soundness

#[derive(Clone, Debug, Default)]
pub struct ConstraintReport {
    pub samples: usize,
    pub fixed_slots: usize,
    pub placement_violations: usize,
    pub duplicates: usize,
    pub wrong_length: usize,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.samples > 0 && self.placement_violations == 0 && self.duplicates == 0 && self.wrong_length == 0
    }
}

/// Random fixed-insertion sets on random instances, sampled generations.
pub fn constraint_soundness(samples: usize, seed: u64) -> Result<ConstraintReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 3;
    let actors: Vec<(ActorSpec, ParamStore)> = (1..=5)
        .map(|n| {
            let spec = fixtures::actor_spec(dim, n);
            (spec, fixtures::actor_params(&spec, seed + n as u64))
        })
        .collect();
    let mut report = ConstraintReport::default();
    for _ in 0..samples {
        let (spec, params) = &actors[rng.random_range(0..actors.len())];
        let n = spec.n;
        let m = rng.random_range(n..=n + 4);
        let inst = random::instance(&mut rng, m, dim);
        let k = rng.random_range(0..=n);
        let mut positions: Vec<usize> = (1..=n).collect();
        positions.shuffle(&mut rng);
        let mut picks: Vec<usize> = (0..m).collect();
        picks.shuffle(&mut rng);
        let fixed: Vec<FixedInsertion> = positions
            .iter()
            .zip(&picks)
            .take(k)
            .map(|(&position, &i)| FixedInsertion {
                position,
                id: inst.candidates[i].id,
            })
            .collect();
        let c = Constraints::resolve(&fixed, &inst.candidates, n)?;
        let list = spec.generate_list(params, &inst, &c, Mode::Sample, &mut rng)?;
        report.samples += 1;
        report.fixed_slots += fixed.len();
        if list.indices.len() != n {
            report.wrong_length += 1;
        }
        let mut seen = list.indices.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != list.indices.len() {
            report.duplicates += 1;
        }
        for f in &fixed {
            let at = list.indices.get(f.position - 1).map(|&i| inst.candidates[i].id);
            if at != Some(f.id) {
                report.placement_violations += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// policy distribution

#[derive(Clone, Debug)]
pub struct PolicyReport {
    pub samples: usize,
    /// List → (chained decode-step probability, empirical frequency).
    pub lists: BTreeMap<Vec<usize>, (f64, f64)>,
    pub total_probability: f64,
    pub max_abs_dev: f64,
}

impl PolicyReport {
    pub const TOLERANCE: f64 = 0.005;

    pub fn passed(&self) -> bool {
        self.max_abs_dev <= Self::TOLERANCE && (self.total_probability - 1.0).abs() < 1e-9
    }
}

/// Probability of `list` as the product of teacher-forced `decode_step`
/// probabilities.
pub fn chained_probability(spec: &ActorSpec, params: &ParamStore, inst: &Instance, list: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let vars = tape.bind(params);
    let c = Constraints::none(inst.m(), spec.n);
    let enc = spec.encode(&tape, &vars, inst)?;
    let mut state = spec.init_state(&tape, &vars, &enc)?;
    let mut p = 1.0;
    for _ in 0..spec.n {
        let (_, a, _, next) = spec.decode_step(&tape, &vars, inst, &enc, &state, &c, &mut Policy::Forced(list))?;
        p *= a;
        state = next;
    }
    Ok(p)
}

/// Empirical list frequencies of sampled generations against the chained
/// step probabilities on an `m`-candidate, `n`-slot model.
pub fn policy_distribution(m: usize, n: usize, samples: usize, seed: u64) -> Result<PolicyReport> {
    let dim = 3;
    let spec = fixtures::actor_spec(dim, n);
    let params = fixtures::actor_params(&spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = random::instance(&mut rng, m, dim);
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let c = Constraints::none(m, n);
    for _ in 0..samples {
        let l = spec.generate_list(&params, &inst, &c, Mode::Sample, &mut rng)?;
        *counts.entry(l.indices).or_default() += 1;
    }
    let mut lists = BTreeMap::new();
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    for l in oracle::arrangements(m, n) {
        let p = chained_probability(&spec, &params, &inst, &l)?;
        let f = *counts.get(&l).unwrap_or(&0) as f64 / samples as f64;
        total += p;
        worst = worst.max((p - f).abs());
        lists.insert(l, (p, f));
    }
    // lists outside the enumeration would be a bug in the sampler
    let stray: usize = counts.keys().filter(|k| !lists.contains_key(*k)).count();
    if stray > 0 {
        worst = f64::INFINITY;
    }
    Ok(PolicyReport {
        samples,
        lists,
        total_probability: total,
        max_abs_dev: worst,
    })
}

// ---------------------------------------------------------------------------
// tiny-instance optimality

/// Six candidates, lists of three, learned engagement against seller
/// diversity.
pub fn tiny_instance_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.m = 6;
    c.data.n = 3;
    c.data.n_items = 300;
    c.data.n_users = 50;
    c.data.n_sellers = 4;
    c.data.n_train = 5000;
    c.data.n_test = 50;
    c.utilities = vec![
        UtilitySpec::new("click", UtilityKind::Engagement, 1.0),
        UtilitySpec {
            group_field: Some(GroupField::Seller),
            ..UtilitySpec::new("seller_div", UtilityKind::Diversity, 0.2)
        },
    ];
    c.preference = PreferenceSampling::Independent;
    c.train.eval_steps = 1500;
    c.train.steps = 1500;
    c
}

#[derive(Clone, Debug)]
pub struct TinyReport {
    pub sessions: usize,
    pub weights: usize,
    pub trained: f64,
    pub random: f64,
    pub optimum: f64,
    pub seconds: f64,
}

impl TinyReport {
    pub fn trained_ratio(&self) -> f64 {
        self.trained / self.optimum
    }

    pub fn random_ratio(&self) -> f64 {
        self.random / self.optimum
    }

    pub fn passed(&self) -> bool {
        self.trained_ratio() >= 0.95 && self.random_ratio() <= 0.75 && self.seconds < 600.0
    }
}

/// Trains on `sessions` tiny candidate sets (each repeated with fresh logged
/// lists to fill a batch), then compares greedy `R_w` with the exhaustive
/// optimum and with the uniform-random policy over `weights` sampled
/// preferences.
pub fn tiny_optimality(cfg: &RunConfig, sessions: usize, weights: usize, seed: u64) -> Result<TinyReport> {
    let start = Instant::now();
    let data = datagen::generate_dataset(cfg)?;
    let train: Vec<Instance> = data.train.iter().map(Instance::from_sample).collect::<Result<_>>()?;
    let mut model = Model::init(cfg.clone())?;
    training::pretrain_evaluator(&mut model, &train)?;

    let tiny: Vec<Instance> = data.test[..sessions]
        .iter()
        .map(Instance::from_sample)
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Instance> = (0..cfg.train.batch.max(sessions))
        .map(|j| {
            let mut inst = tiny[j % sessions].clone();
            inst.exposure = datagen::logging_policy(&inst.candidates, cfg.data.n, cfg.data.logging_temperature, &mut rng);
            inst
        })
        .collect();
    training::train_actor(&mut model, &rows, cfg.train.steps, |_, _| Ok(()))?;

    let (m, n) = (cfg.data.m, cfg.data.n);
    let all = oracle::arrangements(m, n);
    let ws: Vec<Vec<f64>> = (0..weights)
        .map(|_| utilities::sample_preference_with(&cfg.caps(), &mut rng))
        .collect();
    let (mut trained, mut random, mut optimum) = (0.0, 0.0, 0.0);
    for inst in &tiny {
        let table: Vec<Vec<f64>> = all
            .iter()
            .map(|l| model.utility_vector(&[(inst, l.as_slice())]))
            .collect::<Result<_>>()?;
        for w in &ws {
            let value = |u: &[f64]| utilities::scalarize(u, w).expect("aligned");
            let (_, best) = metrics::oracle_best_list(m, n, |l| {
                let k = all.iter().position(|x| x == l).expect("enumerated");
                value(&table[k])
            })?;
            optimum += best;
            random += table.iter().map(|u| value(u)).sum::<f64>() / table.len() as f64;
            let l = model.rerank(inst, w, &[], Mode::Greedy, &mut rng)?;
            trained += value(&model.utility_vector(&[(inst, l.indices.as_slice())])?);
        }
    }
    Ok(TinyReport {
        sessions,
        weights,
        trained,
        random,
        optimum,
        seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// evaluator and steering helpers

/// Losses on one fixed batch before each of `steps` Adam updates, plus the
/// loss after the last one.
pub fn evaluator_fixed_batch(model: &Model, batch: &[Instance], steps: usize) -> Result<Vec<f64>> {
    let mut params = model.evaluator_params();
    let mut adam = Adam::new(AdamConfig::with_lr(model.config.train.lr_eval));
    let refs: Vec<&Instance> = batch.iter().collect();
    let mut curve = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        curve.push(evaluator::train_step(&model.evaluator, &mut params, &mut adam, &refs, model.config.train.clip)?);
    }
    let tape = Tape::new();
    let vars = tape.bind(&params);
    let loss = model.evaluator.loss(&tape, &vars, &refs)?;
    curve.push(tape.scalar(loss));
    Ok(curve)
}

pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.len() >= 2 && xs.windows(2).all(|p| p[1] < p[0])
}

/// Share of shown slots taken by members of `spec`'s group in greedy lists
/// for preference `w`.
pub fn group_exposure(model: &Model, spec: &UtilitySpec, w: &[f64], data: &[Instance]) -> Result<f64> {
    let lists = training::greedy_lists(model, w, data)?;
    let (mut members, mut slots) = (0usize, 0usize);
    for (inst, l) in data.iter().zip(&lists) {
        for &i in l {
            slots += 1;
            if spec.is_member(&inst.candidates[i])? {
                members += 1;
            }
        }
    }
    Ok(members as f64 / slots as f64)
}
