//! Hypernetwork mapping a preference vector to the actor's scoring head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use steerank_autodiff::nn::uniform;
use steerank_autodiff::{Activation, MlpSpec, ParamStore, Tape, Tensor, Var, VarMap};

use crate::error::{Error, Result};

pub const PREFIX: &str = "hypernet/phi";

/// Which actor parameters come from the hypernetwork (θ_w) and which are
/// shared across preferences (θ_w̄). The order of `head` is the order in which
/// the flat hypernetwork output is sliced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSplitSpec {
    pub head: Vec<(String, Vec<usize>)>,
    pub body: Vec<(String, Vec<usize>)>,
}

impl ParamSplitSpec {
    pub fn head_len(&self) -> usize {
        self.head.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Checks the two name sets are disjoint.
    pub fn validate(&self) -> Result<()> {
        for (name, _) in &self.head {
            if self.body.iter().any(|(b, _)| b == name) {
                return Err(Error::Invalid(format!("parameter `{name}` is in both θ_w and θ_w̄")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSpec {
    pub n_utilities: usize,
    pub hidden: usize,
    pub output: usize,
    pub init_scale: f64,
}

impl HyperSpec {
    pub fn mlp(&self) -> MlpSpec {
        MlpSpec::new(vec![self.n_utilities, self.hidden, self.output], Activation::Identity)
    }

    /// Small random output weights; the output bias is `default_head`
    /// flattened in split order, so every `w` starts near that head.
    pub fn init(&self, split: &ParamSplitSpec, default_head: &ParamStore, rng: &mut impl Rng) -> Result<ParamStore> {
        if split.head_len() != self.output {
            return Err(Error::Invalid(format!("hypernet output {} vs head size {}", self.output, split.head_len())));
        }
        let mut p = ParamStore::new();
        self.mlp().init(&mut p, PREFIX, rng)?;
        p.set(format!("{PREFIX}/l1/w"), uniform(&[self.hidden, self.output], self.init_scale, rng));
        let mut bias = Vec::with_capacity(self.output);
        for (name, shape) in &split.head {
            let t = default_head.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!("default head `{name}` has shape {:?}", t.shape())));
            }
            bias.extend_from_slice(t.data());
        }
        p.set(format!("{PREFIX}/l1/b"), Tensor::vector(bias));
        Ok(p)
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.n_utilities {
            return Err(Error::Invalid(format!("preference has {} entries, expected {}", w.len(), self.n_utilities)));
        }
        if let Some(v) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("preference entry {v} is not finite")));
        }
        Ok(())
    }

    /// Records `θ_w = h_φ(w)` on `tape` and inserts the sliced head tensors
    /// into `vars` under their actor names.
    pub fn generate_on_tape(&self, tape: &Tape, vars: &mut VarMap, split: &ParamSplitSpec, w: &[f64]) -> Result<Var> {
        self.check_w(w)?;
        let x = tape.constant(Tensor::vector(w.to_vec()));
        let flat = self.mlp().forward(tape, vars, PREFIX, x)?;
        let mut offset = 0;
        for (name, shape) in &split.head {
            let v = tape.slice(flat, offset, shape)?;
            offset += shape.iter().product::<usize>();
            if vars.insert(name.clone(), v).is_some() {
                return Err(Error::Invalid(format!("generated parameter `{name}` already bound")));
            }
        }
        Ok(flat)
    }

    /// Plain-value θ_w for a preference.
    pub fn generate(&self, phi: &ParamStore, split: &ParamSplitSpec, w: &[f64]) -> Result<ParamStore> {
        self.check_w(w)?;
        let tape = Tape::new();
        let vars = tape.bind(phi);
        let x = tape.constant(Tensor::vector(w.to_vec()));
        let flat = self.mlp().forward(&tape, &vars, PREFIX, x)?;
        let flat = tape.value(flat);
        let mut out = ParamStore::new();
        let mut offset = 0;
        for (name, shape) in &split.head {
            let n: usize = shape.iter().product();
            out.insert(name.clone(), Tensor::new(shape.clone(), flat.data()[offset..offset + n].to_vec())?)?;
            offset += n;
        }
        if let Some(bad) = out.first_non_finite() {
            return Err(Error::NonFinite(bad.to_string()));
        }
        Ok(out)
    }
}

/// Joins generated θ_w with shared θ_w̄ into a complete actor store. Missing
/// or doubly defined names are errors.
pub fn assemble(head: &ParamStore, body: &ParamStore, split: &ParamSplitSpec) -> Result<ParamStore> {
    for (names, store, what) in [(&split.head, head, "θ_w"), (&split.body, body, "θ_w̄")] {
        for (name, shape) in names {
            let t = store
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("{what} is missing `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
    }
    head.merged(body)
        .map_err(|e| Error::Invalid(format!("overlapping actor parameters: {e}")))
}

/// Splits a full actor store back into (θ_w, θ_w̄).
pub fn split_store(actor: &ParamStore, split: &ParamSplitSpec) -> Result<(ParamStore, ParamStore)> {
    let pick = |names: &[(String, Vec<usize>)]| -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, _) in names {
            let t = actor
                .get_shared(name)
                .ok_or_else(|| Error::Invalid(format!("actor store is missing `{name}`")))?;
            out.insert_shared(name.clone(), t.clone())?;
        }
        Ok(out)
    };
    Ok((pick(&split.head)?, pick(&split.body)?))
}
