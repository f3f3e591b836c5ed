//! List-generation policy: a DeepSet encoder over the candidate set and a
//! pointer-style GRU decoder that scores every candidate with
//! `MLP_3([e_s; e_i; e_si])` and picks one item per step.
//!
//! MLP_3 (the scoring head) lives in the `actor/theta_w/...` namespace and is
//! normally produced by the hypernetwork; everything else is
//! `actor/theta_wbar/...`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use steerank_autodiff::nn::{lookup, uniform};
use steerank_autodiff::{masked_softmax, Activation, GruSpec, MlpSpec, ParamStore, Tape, Tensor, Var, VarMap};

use crate::data::Item;
use crate::error::{Error, Result};
use crate::instance::Instance;

pub const BODY: &str = "actor/theta_wbar";
pub const HEAD: &str = "actor/theta_w/mlp3";
/// Width of the local context vector `e_si`.
pub const CONTEXT_WIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub input: usize,
    pub embed: usize,
    pub enc_hidden: usize,
    pub state: usize,
    pub head_hidden: usize,
    pub context_window: usize,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sample,
    Greedy,
}

/// Item `id` must appear at 1-based `position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedInsertion {
    pub position: usize,
    pub id: u64,
}

/// Fixed insertions resolved against one candidate set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Constraints {
    /// Candidate index forced at each step.
    pub at_step: Vec<Option<usize>>,
    /// Candidates reserved for some forced step.
    pub reserved: Vec<bool>,
}

impl Constraints {
    pub fn none(m: usize, n: usize) -> Self {
        Self {
            at_step: vec![None; n],
            reserved: vec![false; m],
        }
    }

    pub fn resolve(fixed: &[FixedInsertion], candidates: &[Item], n: usize) -> Result<Self> {
        let m = candidates.len();
        if n == 0 || n > m {
            return Err(Error::Infeasible(format!("list length {n} with {m} candidates")));
        }
        let mut c = Self::none(m, n);
        for f in fixed {
            if f.position == 0 || f.position > n {
                return Err(Error::Infeasible(format!("position {} outside 1..={n}", f.position)));
            }
            let idx = candidates
                .iter()
                .position(|it| it.id == f.id)
                .ok_or_else(|| Error::Infeasible(format!("item {} is not a candidate", f.id)))?;
            if c.at_step[f.position - 1].is_some() {
                return Err(Error::Infeasible(format!("position {} fixed twice", f.position)));
            }
            if c.reserved[idx] {
                return Err(Error::Infeasible(format!("item {} fixed at two positions", f.id)));
            }
            c.at_step[f.position - 1] = Some(idx);
            c.reserved[idx] = true;
        }
        Ok(c)
    }

    /// Selection mask at `step` given the already selected candidates.
    pub fn allowed(&self, step: usize, selected: &[usize]) -> Vec<bool> {
        let m = self.reserved.len();
        match self.at_step.get(step).copied().flatten() {
            Some(target) => (0..m).map(|i| i == target && !selected.contains(&i)).collect(),
            None => (0..m)
                .map(|i| !self.reserved[i] && !selected.contains(&i))
                .collect(),
        }
    }
}

/// Output of one generation: candidate indices and the probability each one
/// had when it was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub indices: Vec<usize>,
    pub probs: Vec<f64>,
}

impl RankedList {
    pub fn log_prob(&self) -> f64 {
        self.probs.iter().map(|p| p.ln()).sum()
    }
}

/// How the decoder picks among the masked distribution.
pub enum Policy<'a> {
    Sample(&'a mut dyn RngCore),
    Greedy,
    /// Teacher forcing along a given list.
    Forced(&'a [usize]),
}

#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `e_c`.
    pub context: Var,
    /// `[M, embed]` item embeddings (MLP_1 outputs).
    pub items: Var,
}

/// Decoder state before choosing the item for `step`.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// `e_s` for the current step.
    pub hidden: Var,
    pub step: usize,
    pub selected: Vec<usize>,
}

/// Local context `e_si` of `item` given the prefix chosen so far:
/// `[same-seller count in prefix, same-seller count in window, same-category
/// count in window, same category as previous item, step/N, prio, cold, new]`.
pub fn local_context(prefix: &[&Item], item: &Item, window: usize, n: usize) -> [f64; CONTEXT_WIDTH] {
    let recent = &prefix[prefix.len().saturating_sub(window)..];
    let count = |it: &[&Item], f: &dyn Fn(&Item) -> bool| it.iter().filter(|p| f(p)).count() as f64;
    let same_seller = |p: &Item| p.seller == item.seller;
    let same_cat = |p: &Item| p.category == item.category;
    [
        count(prefix, &same_seller),
        count(recent, &same_seller),
        count(recent, &same_cat),
        prefix.last().map_or(0.0, |p| f64::from(u8::from(p.category == item.category))),
        prefix.len() as f64 / n.max(1) as f64,
        f64::from(item.prio),
        f64::from(u8::from(item.cold)),
        f64::from(u8::from(item.new)),
    ]
}

impl ActorSpec {
    pub fn mlp1(&self) -> MlpSpec {
        MlpSpec::new(vec![self.input, self.enc_hidden, self.embed], Activation::Tanh)
    }

    pub fn mlp2(&self) -> MlpSpec {
        MlpSpec::new(vec![self.embed, self.enc_hidden, self.state], Activation::Tanh)
    }

    pub fn gru(&self) -> GruSpec {
        GruSpec {
            input: self.embed,
            hidden: self.state,
        }
    }

    pub fn head_input(&self) -> usize {
        self.state + self.embed + CONTEXT_WIDTH
    }

    pub fn mlp3(&self) -> MlpSpec {
        MlpSpec::new(vec![self.head_input(), self.head_hidden, 1], Activation::Identity)
    }

    /// Names and shapes of θ_w (the scoring head).
    pub fn head_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.mlp3().param_shapes(HEAD)
    }

    /// Names and shapes of θ_w̄ (encoder, recurrent cell, start token).
    pub fn body_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = self.mlp1().param_shapes(&format!("{BODY}/mlp1"));
        v.extend(self.mlp2().param_shapes(&format!("{BODY}/mlp2")));
        v.extend(self.gru().param_shapes(&format!("{BODY}/gru")));
        v.push((format!("{BODY}/start"), vec![self.embed]));
        v
    }

    pub fn init_body(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        let mut p = ParamStore::new();
        self.mlp1().init(&mut p, &format!("{BODY}/mlp1"), rng)?;
        self.mlp2().init(&mut p, &format!("{BODY}/mlp2"), rng)?;
        self.gru().init(&mut p, &format!("{BODY}/gru"), rng)?;
        p.insert(format!("{BODY}/start"), uniform(&[self.embed], 1.0, rng))?;
        Ok(p)
    }

    pub fn init_head(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        let mut p = ParamStore::new();
        self.mlp3().init(&mut p, HEAD, rng)?;
        Ok(p)
    }

    /// `e_c = MLP_2(Σ_i MLP_1([x_i; x_u]))` with the sum taken in item-id
    /// order, so any permutation of the candidates gives the same bits.
    pub fn encode(&self, tape: &Tape, vars: &VarMap, inst: &Instance) -> Result<Encoded> {
        if inst.width() != self.input {
            return Err(Error::Invalid(format!("actor input width {}, rows have {}", self.input, inst.width())));
        }
        let x = tape.constant(inst.rows.clone());
        let e = self.mlp1().forward(tape, vars, &format!("{BODY}/mlp1"), x)?;
        let m = inst.m();
        let idx: Vec<usize> = inst
            .id_order
            .iter()
            .flat_map(|&i| (0..self.embed).map(move |j| i * self.embed + j))
            .collect();
        let canonical = tape.reshape(tape.gather(e, &idx)?, &[m, self.embed])?;
        let pooled = tape.sum_rows(canonical)?;
        let context = self.mlp2().forward(tape, vars, &format!("{BODY}/mlp2"), pooled)?;
        Ok(Encoded { context, items: e })
    }

    /// First decoder state: the GRU consumes the start token from `e_c`.
    pub fn init_state(&self, tape: &Tape, vars: &VarMap, enc: &Encoded) -> Result<DecoderState> {
        let start = lookup(vars, &format!("{BODY}/start"))?;
        let hidden = self.gru().step(tape, vars, &format!("{BODY}/gru"), enc.context, start)?;
        Ok(DecoderState {
            hidden,
            step: 0,
            selected: Vec::new(),
        })
    }

    /// Attention logits `MLP_3([e_s; e_i; e_si])` for every candidate, `[M]`.
    pub fn scores(&self, tape: &Tape, vars: &VarMap, inst: &Instance, enc: &Encoded, state: &DecoderState) -> Result<Var> {
        let m = inst.m();
        let prefix = inst.items(&state.selected);
        let mut ctx = Vec::with_capacity(m * CONTEXT_WIDTH);
        for it in &inst.candidates {
            ctx.extend_from_slice(&local_context(&prefix, it, self.context_window, self.n));
        }
        let esi = tape.constant(Tensor::matrix(m, CONTEXT_WIDTH, ctx)?);
        let es = tape.repeat_rows(state.hidden, m)?;
        let x = tape.concat(&[es, enc.items, esi])?;
        let out = self.mlp3().forward(tape, vars, HEAD, x)?;
        Ok(tape.reshape(out, &[m])?)
    }

    /// One decoding step. Returns the chosen candidate, its probability, the
    /// recorded `log a_π` and the next state.
    pub fn decode_step(
        &self,
        tape: &Tape,
        vars: &VarMap,
        inst: &Instance,
        enc: &Encoded,
        state: &DecoderState,
        constraints: &Constraints,
        policy: &mut Policy,
    ) -> Result<(usize, f64, Var, DecoderState)> {
        let allowed = constraints.allowed(state.step, &state.selected);
        let logits = self.scores(tape, vars, inst, enc, state)?;
        let a = tape.masked_softmax(logits, &allowed)?;
        let probs = tape.value(a).data().to_vec();
        let choice = match policy {
            Policy::Greedy => argmax(&probs),
            Policy::Sample(rng) => sample_categorical(&probs, &mut **rng),
            Policy::Forced(list) => {
                let c = *list
                    .get(state.step)
                    .ok_or_else(|| Error::Invalid("forced list shorter than N".into()))?;
                if c >= probs.len() || probs[c] == 0.0 {
                    return Err(Error::Infeasible(format!("forced candidate {c} is masked at step {}", state.step)));
                }
                c
            }
        };
        let log_a = tape.ln(tape.gather(a, &[choice])?);
        let mut selected = state.selected.clone();
        selected.push(choice);
        let hidden = if state.step + 1 < self.n {
            let x = tape.row(enc.items, choice)?;
            self.gru().step(tape, vars, &format!("{BODY}/gru"), state.hidden, x)?
        } else {
            state.hidden
        };
        let next = DecoderState {
            hidden,
            step: state.step + 1,
            selected,
        };
        Ok((choice, probs[choice], log_a, next))
    }

    /// Generates a full list of `n` items; the returned variable is
    /// `Σ_n log a_{π_n}` on the tape.
    pub fn rollout(
        &self,
        tape: &Tape,
        vars: &VarMap,
        inst: &Instance,
        constraints: &Constraints,
        policy: &mut Policy,
    ) -> Result<(RankedList, Var)> {
        if self.n == 0 || self.n > inst.m() {
            return Err(Error::Infeasible(format!("list length {} with {} candidates", self.n, inst.m())));
        }
        if constraints.reserved.len() != inst.m() || constraints.at_step.len() != self.n {
            return Err(Error::Invalid("constraints resolved for a different shape".into()));
        }
        let enc = self.encode(tape, vars, inst)?;
        let mut state = self.init_state(tape, vars, &enc)?;
        let mut logs = Vec::with_capacity(self.n);
        let mut probs = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let (_, p, log_a, next) = self.decode_step(tape, vars, inst, &enc, &state, constraints, policy)?;
            probs.push(p);
            logs.push(log_a);
            state = next;
        }
        let total = tape.sum(tape.concat(&logs)?);
        Ok((
            RankedList {
                indices: state.selected,
                probs,
            },
            total,
        ))
    }

    /// Plain-value generation with assembled actor parameters.
    pub fn generate_list(
        &self,
        params: &ParamStore,
        inst: &Instance,
        constraints: &Constraints,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<RankedList> {
        let tape = Tape::new();
        let vars = tape.bind(params);
        let mut policy = match mode {
            Mode::Greedy => Policy::Greedy,
            Mode::Sample => Policy::Sample(rng),
        };
        Ok(self.rollout(&tape, &vars, inst, constraints, &mut policy)?.0)
    }

    /// Per-step probabilities of a given list under the policy.
    pub fn score_list(&self, params: &ParamStore, inst: &Instance, constraints: &Constraints, list: &[usize]) -> Result<RankedList> {
        let tape = Tape::new();
        let vars = tape.bind(params);
        Ok(self.rollout(&tape, &vars, inst, constraints, &mut Policy::Forced(list))?.0)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector. Zero-probability entries are
/// never returned.
pub fn sample_categorical(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Plain masked distribution (exposed for tests and tooling).
pub fn step_distribution(logits: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    Ok(masked_softmax(logits, allowed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ContentType;

    fn it(id: u64, seller: u32, category: u32) -> Item {
        Item {
            id,
            seller,
            category,
            ctype: ContentType::Text,
            prio: 2,
            cold: true,
            new: false,
            ctr: 0.1,
            features: vec![0.0],
        }
    }

    #[test]
    fn local_context_examples() {
        let target = it(9, 1, 5);
        assert_eq!(local_context(&[], &target, 3, 10), [0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0]);
        let (a, b) = (it(1, 1, 0), it(2, 2, 5));
        let c = local_context(&[&a, &b], &target, 1, 10);
        assert_eq!((c[0], c[1]), (1.0, 0.0));
        assert_eq!((c[2], c[3], c[4]), (1.0, 1.0, 0.2));
        let a2 = it(3, 1, 0);
        let c = local_context(&[&a, &a2], &target, 2, 10);
        assert_eq!((c[0], c[1]), (2.0, 2.0));
    }

    #[test]
    fn constraint_resolution() {
        let cands: Vec<Item> = (0..4).map(|i| it(10 + i, 0, 0)).collect();
        let c = Constraints::resolve(&[FixedInsertion { position: 2, id: 12 }], &cands, 3).unwrap();
        assert_eq!(c.at_step, vec![None, Some(2), None]);
        assert_eq!(c.allowed(0, &[]), vec![true, true, false, true]);
        assert_eq!(c.allowed(1, &[0]), vec![false, false, true, false]);
        let bad = |f: &[FixedInsertion]| Constraints::resolve(f, &cands, 3).is_err();
        assert!(bad(&[FixedInsertion { position: 4, id: 10 }]));
        assert!(bad(&[FixedInsertion { position: 1, id: 99 }]));
        assert!(bad(&[FixedInsertion { position: 1, id: 10 }, FixedInsertion { position: 1, id: 11 }]));
        assert!(bad(&[FixedInsertion { position: 1, id: 10 }, FixedInsertion { position: 2, id: 10 }]));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
