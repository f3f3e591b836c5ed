//! Five-channel list evaluator predicting a click probability per position.
//!
//! Items are embedded by a two-layer tanh MLP, then the list `E = [e_1..e_N]` feeds
//! five channels: sum pooling, per-item MLP_4 concatenated, multi-head
//! self-attention summed over positions, the final GRU state, and the inner
//! products of all pairs `i < j`. Their concatenation goes through MLP_5 and a
//! sigmoid. The parameter count of MLP_5 depends on `N`, so an evaluator is
//! tied to one list length.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steerank_autodiff::nn::{self, lookup, uniform};
use steerank_autodiff::{clip_global_norm, Activation, Adam, AdamConfig, GruSpec, MlpSpec, ParamStore, Tape, Tensor, Var, VarMap};

use crate::error::{invalid, Error, Result};
use crate::instance::Instance;
use crate::metrics;

pub const PREFIX: &str = "evaluator";
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EvaluatorSpec {
    pub input: usize,
    pub embed: usize,
    pub embed_hidden: usize,
    pub fc: usize,
    pub heads: usize,
    pub rnn: usize,
    pub hidden: usize,
    pub n: usize,
}

/// Channel outputs of one list.
#[derive(Clone, Copy, Debug)]
pub struct Channels {
    pub embeddings: Var,
    pub sp: Var,
    pub fc: Var,
    pub mh: Var,
    pub rnn: Var,
    pub pc: Var,
}

impl EvaluatorSpec {
    pub fn embed_mlp(&self) -> MlpSpec {
        MlpSpec::new(vec![self.input, self.embed_hidden, self.embed], Activation::Tanh)
    }

    pub fn mlp4(&self) -> MlpSpec {
        MlpSpec::new(vec![self.embed, self.fc], Activation::Tanh)
    }

    pub fn gru(&self) -> GruSpec {
        GruSpec {
            input: self.embed,
            hidden: self.rnn,
        }
    }

    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn concat_width(&self) -> usize {
        self.embed + self.n * self.fc + self.embed + self.rnn + self.pair_count()
    }

    pub fn mlp5(&self) -> MlpSpec {
        MlpSpec::new(vec![self.concat_width(), self.hidden, self.n], Activation::Identity)
    }

    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        if self.heads == 0 || self.embed % self.heads != 0 {
            return invalid(format!("embed {} not divisible by {} heads", self.embed, self.heads));
        }
        let mut p = ParamStore::new();
        self.embed_mlp().init(&mut p, &format!("{PREFIX}/embed"), rng)?;
        self.mlp4().init(&mut p, &format!("{PREFIX}/mlp4"), rng)?;
        let bound = 1.0 / (self.embed as f64).sqrt();
        for name in ["wq", "wk", "wv"] {
            p.insert(format!("{PREFIX}/attn/{name}"), uniform(&[self.embed, self.embed], bound, rng))?;
        }
        self.gru().init(&mut p, &format!("{PREFIX}/gru"), rng)?;
        self.mlp5().init(&mut p, &format!("{PREFIX}/mlp5"), rng)?;
        Ok(p)
    }

    /// All five channels for a `[N, input]` list.
    pub fn channels(&self, tape: &Tape, vars: &VarMap, rows: Var) -> Result<Channels> {
        let shape = tape.shape(rows);
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.input {
            return invalid(format!("evaluator rows {shape:?}, expected [N, {}]", self.input));
        }
        let n = shape[0];
        let e = self.embed_mlp().forward(tape, vars, &format!("{PREFIX}/embed"), rows)?;
        let sp = tape.sum_rows(e)?;
        let fc_rows = self.mlp4().forward(tape, vars, &format!("{PREFIX}/mlp4"), e)?;
        let fc = tape.reshape(fc_rows, &[n * self.fc])?;
        let mh = nn::self_attention_pooled(
            tape,
            e,
            lookup(vars, &format!("{PREFIX}/attn/wq"))?,
            lookup(vars, &format!("{PREFIX}/attn/wk"))?,
            lookup(vars, &format!("{PREFIX}/attn/wv"))?,
            self.heads,
        )?;
        let gru = self.gru();
        let mut h = tape.constant(Tensor::zeros(&[self.rnn]));
        for i in 0..n {
            let x = tape.row(e, i)?;
            h = gru.step(tape, vars, &format!("{PREFIX}/gru"), h, x)?;
        }
        let gram = tape.matmul(e, tape.transpose(e)?)?;
        let pairs: Vec<usize> = (0..n).flat_map(|i| (i + 1..n).map(move |j| i * n + j)).collect();
        let pc = tape.gather(gram, &pairs)?;
        Ok(Channels {
            embeddings: e,
            sp,
            fc,
            mh,
            rnn: h,
            pc,
        })
    }

    /// Per-position click probabilities for a `[N, input]` list.
    pub fn forward(&self, tape: &Tape, vars: &VarMap, rows: Var) -> Result<Var> {
        let n = tape.shape(rows).first().copied().unwrap_or(0);
        if n != self.n {
            return invalid(format!("evaluator built for lists of {}, got {n}", self.n));
        }
        let c = self.channels(tape, vars, rows)?;
        let cat = tape.concat(&[c.sp, c.fc, c.mh, c.rnn, c.pc])?;
        let logits = self.mlp5().forward(tape, vars, &format!("{PREFIX}/mlp5"), cat)?;
        Ok(tape.sigmoid(logits))
    }

    /// Plain-value predictions for several lists of one or more instances.
    pub fn predict_many(&self, params: &ParamStore, lists: &[(&Instance, &[usize])]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let vars = tape.bind(params);
        let mut out = Vec::with_capacity(lists.len());
        for (inst, list) in lists {
            let rows = tape.constant(inst.list_rows(list)?);
            let p = self.forward(&tape, &vars, rows)?;
            out.push(tape.value(p).data().to_vec());
        }
        Ok(out)
    }

    pub fn predict(&self, params: &ParamStore, inst: &Instance, list: &[usize]) -> Result<Vec<f64>> {
        Ok(self.predict_many(params, &[(inst, list)])?.remove(0))
    }

    /// Mean binary cross-entropy per position over the exposure lists of
    /// `batch`.
    pub fn loss(&self, tape: &Tape, vars: &VarMap, batch: &[&Instance]) -> Result<Var> {
        if batch.is_empty() {
            return invalid("empty evaluator batch");
        }
        let mut terms = Vec::with_capacity(batch.len());
        let mut count = 0usize;
        for inst in batch {
            if inst.exposure.len() != self.n || inst.clicks.len() != self.n {
                return invalid("evaluator training needs full exposure lists with labels");
            }
            let rows = tape.constant(inst.list_rows(&inst.exposure)?);
            let p = self.forward(tape, vars, rows)?;
            let bce = tape.binary_cross_entropy(p, &inst.clicks, BCE_EPS)?;
            terms.push(tape.reshape(bce, &[1])?);
            count += self.n;
        }
        let total = tape.sum(tape.concat(&terms)?);
        Ok(tape.scale(total, 1.0 / count as f64))
    }
}

/// One Adam step on a batch; returns the batch loss before the update.
pub fn train_step(
    spec: &EvaluatorSpec,
    params: &mut ParamStore,
    adam: &mut Adam,
    batch: &[&Instance],
    clip: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = tape.bind(params);
    let loss = spec.loss(&tape, &vars, batch)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("evaluator loss".into()));
    }
    let grads = tape.grad(loss)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    let grads = clip_global_norm(&grads, clip);
    adam.update(params, &grads);
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(value)
}

/// Supervised pre-training on random mini-batches; returns the per-step loss
/// curve.
pub fn train_evaluator(
    spec: &EvaluatorSpec,
    params: &mut ParamStore,
    data: &[Instance],
    steps: usize,
    batch: usize,
    lr: f64,
    clip: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return invalid("empty evaluator training set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(AdamConfig::with_lr(lr));
    let b = batch.min(data.len());
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let idx = sample_indices(&mut rng, data.len(), b);
        let mb: Vec<&Instance> = idx.iter().map(|i| &data[i]).collect();
        curve.push(train_step(spec, params, &mut adam, &mb, clip)?);
    }
    Ok(curve)
}

/// Held-out AUC of per-position predictions against the logged clicks.
pub fn heldout_auc(spec: &EvaluatorSpec, params: &ParamStore, data: &[Instance]) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for chunk in data.chunks(256) {
        let lists: Vec<(&Instance, &[usize])> = chunk.iter().map(|i| (i, i.exposure.as_slice())).collect();
        for (preds, inst) in spec.predict_many(params, &lists)?.into_iter().zip(chunk) {
            scores.extend(preds);
            labels.extend(inst.clicks.iter().map(|&c| c > 0.5));
        }
    }
    metrics::auc(&scores, &labels).ok_or_else(|| Error::Invalid("AUC needs both click labels".into()))
}
