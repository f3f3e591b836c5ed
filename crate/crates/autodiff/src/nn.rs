//! Layer primitives: MLPs, a gated recurrent cell, multi-head self-attention.
//!
//! Parameters are addressed by name. An MLP under prefix `p` owns
//! `p/l{k}/w` (`[in, out]`) and `p/l{k}/b` (`[out]`) for each layer `k`.
//! A GRU under `p` owns `p/{wz,wr,wn}` (`[in, hidden]`), `p/{uz,ur,un}`
//! (`[hidden, hidden]`) and `p/{bz,br,bn}` (`[hidden]`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{DiffError, ParamStore, Result, Tape, Tensor, Var, VarMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Layer widths `[in, h1, ..., out]`; hidden layers use tanh.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        Self { widths, output }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `(name, shape)` of every parameter, in layer order.
    pub fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(2 * self.layers());
        for (k, pair) in self.widths.windows(2).enumerate() {
            out.push((format!("{prefix}/l{k}/w"), vec![pair[0], pair[1]]));
            out.push((format!("{prefix}/l{k}/b"), vec![pair[1]]));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Uniform(±1/√fan_in) initialization for weights and biases.
    pub fn init(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        for (k, pair) in self.widths.windows(2).enumerate() {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            store.insert(format!("{prefix}/l{k}/w"), uniform(&[pair[0], pair[1]], bound, rng))?;
            store.insert(format!("{prefix}/l{k}/b"), uniform(&[pair[1]], bound, rng))?;
        }
        Ok(())
    }

    /// Applies the MLP to `x` (`[in]` or `[rows, in]`).
    pub fn forward(&self, tape: &Tape, vars: &VarMap, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers() - 1;
        for k in 0..self.layers() {
            let w = lookup(vars, &format!("{prefix}/l{k}/w"))?;
            let b = lookup(vars, &format!("{prefix}/l{k}/b"))?;
            h = tape.linear(h, w, Some(b))?;
            h = if k == last {
                self.output.apply(tape, h)
            } else {
                tape.tanh(h)
            };
        }
        Ok(h)
    }
}

/// Gated recurrent cell dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
}

impl GruSpec {
    pub fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(9);
        for gate in ["z", "r", "n"] {
            out.push((format!("{prefix}/w{gate}"), vec![self.input, self.hidden]));
            out.push((format!("{prefix}/u{gate}"), vec![self.hidden, self.hidden]));
            out.push((format!("{prefix}/b{gate}"), vec![self.hidden]));
        }
        out
    }

    pub fn init(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        for (name, shape) in self.param_shapes(prefix) {
            store.insert(name, uniform(&shape, bound, rng))?;
        }
        Ok(())
    }

    /// One step:
    /// `z = σ(x·Wz + h·Uz + bz)`, `r = σ(x·Wr + h·Ur + br)`,
    /// `n = tanh(x·Wn + (r⊙h)·Un + bn)`, `h' = (1 − z)⊙n + z⊙h`.
    pub fn step(&self, tape: &Tape, vars: &VarMap, prefix: &str, h: Var, x: Var) -> Result<Var> {
        let hs = tape.shape(h);
        if hs != [self.hidden] {
            return Err(DiffError::Shape(format!("gru hidden {hs:?}, expected [{}]", self.hidden)));
        }
        let gate = |g: &str, hin: Var| -> Result<Var> {
            let xw = tape.linear(x, lookup(vars, &format!("{prefix}/w{g}"))?, Some(lookup(vars, &format!("{prefix}/b{g}"))?))?;
            let hu = tape.linear(hin, lookup(vars, &format!("{prefix}/u{g}"))?, None)?;
            tape.add(xw, hu)
        };
        let z = tape.sigmoid(gate("z", h)?);
        let r = tape.sigmoid(gate("r", h)?);
        let rh = tape.mul(r, h)?;
        let n = tape.tanh(gate("n", rh)?);
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }
}

/// Sum over positions of concatenated scaled dot-product attention heads.
///
/// `e` is `[n, d]`; `wq`, `wk`, `wv` are `[d, p]` with `p` divisible by
/// `heads`. Returns a `[p]` vector.
pub fn self_attention_pooled(tape: &Tape, e: Var, wq: Var, wk: Var, wv: Var, heads: usize) -> Result<Var> {
    let p = tape.shape(wq)[1];
    if heads == 0 || p % heads != 0 {
        return Err(DiffError::Shape(format!("projection width {p} not divisible by {heads} heads")));
    }
    let n = tape.shape(e)[0];
    let q = tape.matmul(e, wq)?;
    let k = tape.matmul(e, wk)?;
    let v = tape.matmul(e, wv)?;
    let dh = p / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut pooled = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols: Vec<usize> = (0..n).flat_map(|i| (0..dh).map(move |j| i * p + h * dh + j)).collect();
        let qh = tape.reshape(tape.gather(q, &cols)?, &[n, dh])?;
        let kh = tape.reshape(tape.gather(k, &cols)?, &[n, dh])?;
        let vh = tape.reshape(tape.gather(v, &cols)?, &[n, dh])?;
        let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale);
        let attn = tape.softmax_rows(scores)?;
        let out = tape.matmul(attn, vh)?;
        pooled.push(tape.sum_rows(out)?);
    }
    tape.concat(&pooled)
}

pub fn lookup(vars: &VarMap, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Evaluates an MLP on a plain input without keeping the tape.
pub fn mlp_apply(spec: &MlpSpec, params: &ParamStore, prefix: &str, input: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = tape.bind(params);
    let x = tape.constant(input.clone());
    let y = spec.forward(&tape, &vars, prefix, x)?;
    let out = tape.value(y).clone();
    Ok(out)
}

/// One recurrent step on plain tensors.
pub fn gru_step(spec: &GruSpec, params: &ParamStore, prefix: &str, hidden: &Tensor, input: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = tape.bind(params);
    let h = tape.constant(hidden.clone());
    let x = tape.constant(input.clone());
    let y = spec.step(&tape, &vars, prefix, h, x)?;
    let out = tape.value(y).clone();
    Ok(out)
}

/// Multi-head self-attention, summed over positions, on plain tensors.
pub fn multi_head_self_attention(e: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor, heads: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let ev = tape.constant(e.clone());
    let q = tape.constant(wq.clone());
    let k = tape.constant(wk.clone());
    let v = tape.constant(wv.clone());
    let y = self_attention_pooled(&tape, ev, q, k, v, heads)?;
    let out = tape.value(y).clone();
    Ok(out)
}
