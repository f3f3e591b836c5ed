//! Conditional REINFORCE training of the hypernetwork and actor, and the
//! preference sweeps used to evaluate controllability.
//!
//! One step: draw a batch of logged samples, draw one preference `w`, generate
//! the scoring head from `w` on the tape, sample one list per sample, score
//! generated and logged lists with the same `w` and frozen evaluator, and take
//! an Adam step on `φ` (and `θ_w̄` when `train.joint` is set) along
//! `mean_p −(R_p − R^exp_p)·Σ_n log a_{π_n}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use steerank_autodiff::{clip_global_norm, Adam, AdamConfig, ParamStore, Tape, Tensor, Var, VarMap};

use crate::actor::{self, Constraints, Mode, Policy, RankedList};
use crate::bundle;
use crate::config::{PreferenceSampling, RunConfig};
use crate::data::Item;
use crate::datagen::ClickModel;
use crate::error::{invalid, Error, Result};
use crate::evaluator;
use crate::hypernet;
use crate::instance::Instance;
use crate::metrics::{self, JudgedList};
use crate::model::Model;
use crate::utilities::{self, PageRef};

/// Stages of one conditional step, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    SampleData,
    SampleWeights,
    Hypernet,
    Generate,
    Reward,
    Update,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub w: Vec<f64>,
    pub l_actor: f64,
    /// Batch mean of `R_w(L) − R_w(L_exp)`.
    pub advantage: f64,
    pub reward_gen: f64,
    pub reward_exp: f64,
    pub utilities_gen: Vec<f64>,
    pub utilities_exp: Vec<f64>,
}

/// `−(reward_gen − reward_exp) · Σ log p`.
pub fn actor_loss(reward_gen: f64, reward_exp: f64, step_probs: &[f64]) -> Result<f64> {
    if let Some(p) = step_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return invalid(format!("step probability {p} outside (0, 1]"));
    }
    let log: f64 = step_probs.iter().map(|p| p.ln()).sum();
    Ok(-(reward_gen - reward_exp) * log)
}

/// Optimizer state of the actor side.
#[derive(Clone, Debug)]
pub struct ActorOptim {
    pub hyper: Adam,
    pub body: Adam,
}

impl ActorOptim {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            hyper: Adam::new(AdamConfig::with_lr(config.train.lr_hyper)),
            body: Adam::new(AdamConfig::with_lr(config.train.lr_actor)),
        }
    }
}

/// Random stream of training step `step`.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

pub fn sample_data(rng: &mut impl Rng, len: usize, batch: usize) -> Result<Vec<usize>> {
    if len == 0 || batch == 0 {
        return invalid("empty training set or batch");
    }
    Ok(sample_indices(rng, len, batch.min(len)).into_vec())
}

pub fn sample_weights(config: &RunConfig, rng: &mut impl Rng) -> Vec<f64> {
    match config.preference {
        PreferenceSampling::Lambda => {
            let l: f64 = rng.random_range(0.0..=1.0);
            vec![l, 1.0 - l]
        }
        PreferenceSampling::Independent => utilities::sample_preference_with(&config.caps(), rng),
    }
}

/// Binds φ and θ_w̄ as leaves and adds the generated θ_w.
pub fn run_hypernet(model: &Model, tape: &Tape, w: &[f64]) -> Result<VarMap> {
    let mut trainable = model.phi().merged(&model.body())?;
    if !model.config.train.joint {
        trainable = model.phi();
    }
    let mut vars = tape.bind(&trainable);
    if !model.config.train.joint {
        for (name, t) in model.body().iter() {
            vars.insert(name.to_string(), tape.constant(t.clone()));
        }
    }
    model.hyper.generate_on_tape(tape, &mut vars, &model.split, w)?;
    Ok(vars)
}

/// Sample-mode rollouts, one per instance, sharing `rng`.
pub fn generate_lists(
    model: &Model,
    tape: &Tape,
    vars: &VarMap,
    batch: &[&Instance],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(RankedList, Var)>> {
    batch
        .iter()
        .map(|inst| {
            let c = Constraints::none(inst.m(), model.actor.n);
            model.actor.rollout(tape, vars, inst, &c, &mut Policy::Sample(rng))
        })
        .collect()
}

/// Frozen-evaluator click probabilities of each logged exposure list.
pub fn exposure_predictions(model: &Model, batch: &[&Instance]) -> Result<Vec<Vec<f64>>> {
    let lists: Vec<(&Instance, &[usize])> = batch.iter().map(|i| (*i, i.exposure.as_slice())).collect();
    model.predictions(&lists)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rewards {
    pub page_gen: Vec<f64>,
    pub page_exp: Vec<f64>,
    pub utilities_gen: Vec<f64>,
    pub utilities_exp: Vec<f64>,
}

fn make_pages<'a>(items: &'a [Vec<&'a Item>], batch: &'a [&'a Instance]) -> Vec<PageRef<'a>> {
    items
        .iter()
        .zip(batch)
        .map(|(it, inst)| PageRef {
            items: it,
            pool: &inst.candidates,
        })
        .collect()
}

fn page_rewards(terms: &[Vec<f64>], w: &[f64], pages: usize) -> Vec<f64> {
    (0..pages)
        .map(|p| terms.iter().zip(w).map(|(t, wi)| wi * t[p]).sum())
        .collect()
}

/// Per-page scalarized rewards for generated and logged lists. Batch-level
/// gates are evaluated over each batch as a whole.
pub fn rewards(model: &Model, batch: &[&Instance], lists: &[&[usize]], w: &[f64], exp_predictions: &[Vec<f64>]) -> Result<Rewards> {
    let specs = &model.config.utilities;
    let pairs: Vec<(&Instance, &[usize])> = batch.iter().copied().zip(lists.iter().copied()).collect();
    let gen_predictions = model.predictions(&pairs)?;
    let gen_items: Vec<Vec<&Item>> = pairs.iter().map(|(i, l)| i.items(l)).collect();
    let exp_items: Vec<Vec<&Item>> = batch.iter().map(|i| i.items(&i.exposure)).collect();
    let gen_pages = make_pages(&gen_items, batch);
    let exp_pages = make_pages(&exp_items, batch);
    let gen_terms = utilities::all_page_terms(specs, &gen_pages, Some(&gen_predictions))?;
    let exp_terms = utilities::all_page_terms(specs, &exp_pages, Some(exp_predictions))?;
    Ok(Rewards {
        page_gen: page_rewards(&gen_terms, w, batch.len()),
        page_exp: page_rewards(&exp_terms, w, batch.len()),
        utilities_gen: utilities::utility_vector(specs, &gen_pages, Some(&gen_predictions))?,
        utilities_exp: utilities::utility_vector(specs, &exp_pages, Some(exp_predictions))?,
    })
}

/// Records the batch loss on `tape`, back-propagates, clips and applies Adam.
/// Returns the loss value.
pub fn update(model: &mut Model, opt: &mut ActorOptim, tape: &Tape, log_probs: &[Var], advantages: &[f64]) -> Result<f64> {
    let b = log_probs.len();
    if b == 0 || advantages.len() != b {
        return invalid("advantages do not match the batch");
    }
    if let Some(a) = advantages.iter().find(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("advantage {a}")));
    }
    let lp = log_probs
        .iter()
        .map(|&v| tape.reshape(v, &[1]))
        .collect::<steerank_autodiff::Result<Vec<_>>>()?;
    let lp = tape.concat(&lp)?;
    let adv = tape.constant(Tensor::vector(advantages.to_vec()));
    let loss = tape.scale(tape.dot(adv, lp)?, -1.0 / b as f64);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    let grads = tape.grad(loss)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    let grads = clip_global_norm(&grads, model.config.train.clip);
    let phi_grads = grads.filter_prefix(hypernet::PREFIX);
    opt.hyper.update(&mut model.params, &phi_grads);
    if model.config.train.joint {
        opt.body.update(&mut model.params, &grads.filter_prefix(actor::BODY));
    }
    if let Some(name) = model.params.first_non_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(value)
}

/// One conditional step on `data`. `exp_cache` holds the frozen-evaluator
/// predictions for each sample's logged list (filled lazily). Each stage is
/// appended to `trace` as it runs.
pub fn conditional_train_step(
    model: &mut Model,
    opt: &mut ActorOptim,
    data: &[Instance],
    exp_cache: &mut [Option<Vec<f64>>],
    step: usize,
    mut trace: Option<&mut Vec<Stage>>,
) -> Result<LossReport> {
    let mut mark = |s: Stage| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(s);
        }
    };
    if exp_cache.len() != data.len() {
        return invalid("prediction cache does not match the data");
    }
    let mut rng = step_rng(model.config.train.seed, step);
    mark(Stage::SampleData);
    let idx = sample_data(&mut rng, data.len(), model.config.train.batch)?;
    let batch: Vec<&Instance> = idx.iter().map(|&i| &data[i]).collect();
    mark(Stage::SampleWeights);
    let w = sample_weights(&model.config, &mut rng);
    let tape = Tape::new();
    mark(Stage::Hypernet);
    let vars = run_hypernet(model, &tape, &w)?;
    mark(Stage::Generate);
    let gen = generate_lists(model, &tape, &vars, &batch, &mut rng)?;
    mark(Stage::Reward);
    let missing: Vec<usize> = idx.iter().copied().filter(|&i| exp_cache[i].is_none()).collect();
    if !missing.is_empty() {
        let insts: Vec<&Instance> = missing.iter().map(|&i| &data[i]).collect();
        for (i, p) in missing.iter().zip(exposure_predictions(model, &insts)?) {
            exp_cache[*i] = Some(p);
        }
    }
    let exp_preds: Vec<Vec<f64>> = idx.iter().map(|&i| exp_cache[i].clone().expect("filled above")).collect();
    let lists: Vec<&[usize]> = gen.iter().map(|(l, _)| l.indices.as_slice()).collect();
    let r = rewards(model, &batch, &lists, &w, &exp_preds)?;
    let adv: Vec<f64> = r.page_gen.iter().zip(&r.page_exp).map(|(g, e)| g - e).collect();
    mark(Stage::Update);
    let log_probs: Vec<Var> = gen.iter().map(|(_, v)| *v).collect();
    let l_actor = update(model, opt, &tape, &log_probs, &adv)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(LossReport {
        step,
        advantage: mean(&adv),
        reward_gen: utilities::scalarize(&r.utilities_gen, &w)?,
        reward_exp: utilities::scalarize(&r.utilities_exp, &w)?,
        w,
        l_actor,
        utilities_gen: r.utilities_gen,
        utilities_exp: r.utilities_exp,
    })
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub w: Vec<f64>,
    pub map: f64,
    pub ndcg: f64,
    pub ilad: f64,
    pub err_ia: f64,
    pub utilities: Vec<f64>,
}

/// Preference grid of `points` entries. λ-mode walks `(λ, 1 − λ)` over
/// `[0, 1]`; otherwise utility `axis` (default: the first) walks `0..=cap`
/// with the others held at the evaluation weights.
pub fn weight_grid(config: &RunConfig, points: usize, axis: Option<&str>) -> Result<Vec<Vec<f64>>> {
    if points == 0 {
        return invalid("empty weight grid");
    }
    let base = config.eval_weights();
    if points == 1 {
        return Ok(vec![base]);
    }
    let t = |i: usize| i as f64 / (points - 1) as f64;
    match (config.preference, axis) {
        (PreferenceSampling::Lambda, None) => Ok((0..points).map(|i| vec![t(i), 1.0 - t(i)]).collect()),
        (_, axis) => {
            let names = config.utility_names();
            let a = match axis {
                None => 0,
                Some(name) => names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("unknown sweep axis `{name}`")))?,
            };
            let cap = config.caps()[a];
            Ok((0..points)
                .map(|i| {
                    let mut w = base.clone();
                    w[a] = cap * t(i);
                    w
                })
                .collect())
        }
    }
}

/// Ground-truth judged list of `list` drawn from `inst`.
pub fn judged(click: &ClickModel, inst: &Instance, list: &[usize]) -> JudgedList {
    let grade = |it: &Item| u8::from(click.relevant(&inst.user, it));
    let items = inst.items(list);
    JudgedList::new(
        items.iter().map(|it| grade(it)).collect(),
        items.iter().map(|it| it.features.clone()).collect(),
        items.iter().map(|it| i64::from(it.category)).collect(),
    )
    .with_pool(
        inst.candidates.iter().map(grade).collect(),
        inst.candidates.iter().map(|it| i64::from(it.category)).collect(),
    )
}

/// Greedy lists for every instance under `w`.
pub fn greedy_lists(model: &Model, w: &[f64], data: &[Instance]) -> Result<Vec<Vec<usize>>> {
    model.check_weights(w)?;
    let params = model.actor_params(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    data.iter()
        .map(|inst| {
            let c = Constraints::none(inst.m(), model.actor.n);
            Ok(model.actor.generate_list(&params, inst, &c, Mode::Greedy, &mut rng)?.indices)
        })
        .collect()
}

/// Metrics and utility means of greedy lists for each grid point. Utilities
/// are evaluated on consecutive pages of `train.batch` samples and averaged
/// weighted by page count.
pub fn evaluate_controllability(model: &Model, grid: &[Vec<f64>], data: &[Instance]) -> Result<Vec<SweepRow>> {
    if data.is_empty() {
        return invalid("empty evaluation set");
    }
    let k = model.config.eval.k;
    let click = ClickModel::from(&model.config.data.click);
    let chunk = model.config.train.batch.max(1);
    let mut rows = Vec::with_capacity(grid.len());
    for w in grid {
        let lists = greedy_lists(model, w, data)?;
        let (mut map, mut ndcg, mut ilad, mut err) = (0.0, 0.0, 0.0, 0.0);
        for (inst, list) in data.iter().zip(&lists) {
            let j = judged(&click, inst, list);
            map += metrics::map_at_k(&j, k);
            ndcg += metrics::ndcg_at_k(&j, k);
            ilad += metrics::ilad_at_k(&j, k)?;
            err += metrics::err_ia_at_k(&j, k);
        }
        let mut utils = vec![0.0; model.config.utilities.len()];
        for (insts, ls) in data.chunks(chunk).zip(lists.chunks(chunk)) {
            let pairs: Vec<(&Instance, &[usize])> = insts.iter().zip(ls.iter().map(Vec::as_slice)).collect();
            let u = model.utility_vector(&pairs)?;
            for (acc, v) in utils.iter_mut().zip(u) {
                *acc += v * insts.len() as f64;
            }
        }
        let n = data.len() as f64;
        rows.push(SweepRow {
            w: w.clone(),
            map: map / n,
            ndcg: ndcg / n,
            ilad: ilad / n,
            err_ia: err / n,
            utilities: utils.iter().map(|u| u / n).collect(),
        });
    }
    Ok(rows)
}

pub fn sweep_header(config: &RunConfig) -> Vec<String> {
    let k = config.eval.k;
    let mut h: Vec<String> = (1..=config.utilities.len()).map(|i| format!("w_{i}")).collect();
    h.extend([format!("map@{k}"), format!("ndcg@{k}"), format!("ilad@{k}"), format!("err_ia@{k}")]);
    h.extend(config.utility_names());
    h
}

pub fn write_sweep(path: &Path, config: &RunConfig, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(sweep_header(config))?;
    for r in rows {
        let mut rec: Vec<String> = r.w.iter().map(f64::to_string).collect();
        rec.extend([r.map, r.ndcg, r.ilad, r.err_ia].iter().map(f64::to_string));
        rec.extend(r.utilities.iter().map(f64::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Invalid(format!("bad number `{v}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

// ---------------------------------------------------------------------------
// full runs

pub const CURVE_FILE: &str = "curve.csv";
pub const EVALUATOR_CURVE_FILE: &str = "evaluator_curve.csv";
pub const FINAL_EVAL_FILE: &str = "final_eval.csv";
pub const BUNDLE_DIR: &str = "bundle";

pub struct TrainOutput {
    pub model: Model,
    pub evaluator_curve: Vec<f64>,
    pub curve: Vec<LossReport>,
    pub final_eval: Option<SweepRow>,
    pub hash: String,
}

/// Evaluator pre-training on the logged lists.
pub fn pretrain_evaluator(model: &mut Model, data: &[Instance]) -> Result<Vec<f64>> {
    let t = &model.config.train;
    let mut params = model.evaluator_params();
    let curve = evaluator::train_evaluator(
        &model.evaluator,
        &mut params,
        data,
        t.eval_steps,
        t.eval_batch,
        t.lr_eval,
        t.clip,
        t.seed,
    )?;
    model.set_evaluator(&params)?;
    Ok(curve)
}

/// Actor steps `0..steps` on `data`, calling `on_step` after each one.
pub fn train_actor(
    model: &mut Model,
    data: &[Instance],
    steps: usize,
    mut on_step: impl FnMut(&Model, &LossReport) -> Result<()>,
) -> Result<Vec<LossReport>> {
    let mut opt = ActorOptim::new(&model.config);
    let mut cache = vec![None; data.len()];
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let r = conditional_train_step(model, &mut opt, data, &mut cache, step, None)?;
        on_step(model, &r)?;
        curve.push(r);
    }
    Ok(curve)
}

fn write_curve(path: &Path, config: &RunConfig, curve: &[LossReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "l_actor".into(), "advantage".into()];
    header.extend(config.utility_names());
    w.write_record(&header)?;
    for r in curve {
        let mut rec = vec![r.step.to_string(), r.l_actor.to_string(), r.advantage.to_string()];
        rec.extend(r.utilities_gen.iter().map(f64::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Test instances used for evaluation rows (`eval.test_limit` first ones).
pub fn eval_slice<'a>(config: &RunConfig, test: &'a [Instance]) -> &'a [Instance] {
    &test[..config.eval.test_limit.unwrap_or(test.len()).min(test.len())]
}

/// Evaluator pre-training (unless `evaluator` is supplied), actor training,
/// then one evaluation row at the evaluation weights. With `out` set, writes
/// both curves, periodic checkpoints, the final bundle and
/// `final_eval.csv`.
pub fn train(
    config: RunConfig,
    train_data: &[Instance],
    test_data: &[Instance],
    evaluator: Option<&ParamStore>,
    out: Option<&Path>,
) -> Result<TrainOutput> {
    let mut model = Model::init(config)?;
    let evaluator_curve = match evaluator {
        Some(p) => {
            model.set_evaluator(p)?;
            Vec::new()
        }
        None => pretrain_evaluator(&mut model, train_data)?,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join(EVALUATOR_CURVE_FILE))?;
        writeln!(f, "step,loss")?;
        for (i, l) in evaluator_curve.iter().enumerate() {
            writeln!(f, "{i},{l}")?;
        }
    }
    let steps = model.config.train.steps;
    let every = model.config.train.checkpoint_every;
    let curve = train_actor(&mut model, train_data, steps, |m, r| {
        if let (Some(dir), true) = (out, every > 0 && (r.step + 1) % every == 0) {
            bundle::save(m, r.step + 1, &dir.join("checkpoints").join(format!("step_{:06}", r.step + 1)))?;
        }
        Ok(())
    })?;
    let final_eval = if test_data.is_empty() {
        None
    } else {
        let w = model.config.eval_weights();
        let rows = evaluate_controllability(&model, &[w], eval_slice(&model.config, test_data))?;
        rows.into_iter().next()
    };
    let hash = match out {
        Some(dir) => {
            write_curve(&dir.join(CURVE_FILE), &model.config, &curve)?;
            if let Some(row) = &final_eval {
                write_sweep(&dir.join(FINAL_EVAL_FILE), &model.config, std::slice::from_ref(row))?;
            }
            bundle::save(&model, steps, &dir.join(BUNDLE_DIR))?
        }
        None => bundle::hash_of(&model, steps)?,
    };
    Ok(TrainOutput {
        model,
        evaluator_curve,
        curve,
        final_eval,
        hash,
    })
}
