//! Dense `f64` tensors, reverse-mode autodiff, a counter-based RNG and the
//! small amount of layer/optimizer machinery the learned models share.

mod gradcheck;
mod layers;
mod optim;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradReport};
pub use layers::{sinusoidal_features, Linear};
pub use optim::{Adam, AdamConfig};
pub use rng::{derive_seed, derive_seed_str, RngStream};
pub use tape::{ParamId, ParamSet, Parameter, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

use crate::error::{Error, Result};

/// Evaluates `f` on a fresh tape and fills every parameter's gradient with
/// `d loss / d param`. Gradients are zeroed first.
pub fn eval_with_grad<F>(params: &mut ParamSet, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamSet) -> Result<Var>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.check()?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::Shape(format!(
            "loss must be a scalar, got shape {:?}",
            value.shape()
        )));
    }
    let value = value.data()[0];
    tape.backward(loss, params)?;
    Ok(value)
}

/// Forward-only evaluation of a scalar computation.
pub fn eval<F>(params: &ParamSet, f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    tape.check()?;
    Ok(tape.value(out).data()[0])
}

#[cfg(test)]
mod tests;
