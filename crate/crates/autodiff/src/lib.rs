//! Dense `f64` tensors, a recording tape with reverse-mode gradients, and the
//! handful of layers the ranking models are built from.
//!
//! Everything runs in 64-bit floats so that gradients can be checked against
//! central finite differences at tight tolerances. A [`Tape`] records every
//! operation eagerly: values are available immediately (the decoder samples
//! from them mid-forward) and [`Tape::backward`] replays the record in reverse.
//!
//! Parameters live in a [`ParamStore`], an ordered name → tensor map. Binding a
//! store onto a tape yields a [`VarMap`]; models look their weights up by name,
//! which is what allows some weights to be ordinary leaves and others to be
//! outputs of another network recorded on the same tape.

mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
mod params;
pub mod snapshot;
mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use nn::{Activation, GruSpec, MlpSpec};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var, VarMap};
pub use tensor::Tensor;

/// Softmax restricted to the `allowed` entries; disallowed entries come out as
/// exactly zero.
///
/// Equivalent to setting disallowed logits to −∞ before a plain softmax.
pub fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != allowed.len() {
        return Err(DiffError::Shape(format!(
            "masked_softmax: {} logits but {} mask entries",
            logits.len(),
            allowed.len()
        )));
    }
    let max = logits
        .iter()
        .zip(allowed)
        .filter(|(_, &ok)| ok)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DiffError::NoFeasibleAction);
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(allowed)
        .map(|(&z, &ok)| if ok { (z - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}
