use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Evaluates a taped scalar function at `at` without recording gradients.
pub fn eval_scalar<F>(f: &F, at: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(at.clone());
    let y = f(&mut tape, x)?;
    tape.value(y)?.item()
}

/// Central-difference gradient of `f` at `at` with step `h`.
pub fn numeric_gradient<F>(f: &F, at: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut probe = at.detached();
    let mut out = vec![0.0; at.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig;
        *slot = (plus - minus) / (2.0 * h);
    }
    Tensor::new(at.shape(), out)
}

/// Taped gradient of `f` at `at`.
pub fn analytic_gradient<F>(f: &F, at: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.variable(at.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    Ok(grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(at.shape())))
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
pub fn grad_check<F>(f: F, at: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let analytic = analytic_gradient(&f, at)?;
    let numeric = numeric_gradient(&f, at, h)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}
