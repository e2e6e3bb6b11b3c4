use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::{fmt_shape, Tensor};
use crate::{Error, Result};

/// Relative error `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

/// Compares the backpropagated gradient of `f` at `x` with central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` and returns the
/// largest per-coordinate [`relative_error`].
///
/// `f` builds a single-element output from the leaf it is given; it is
/// re-run on a fresh tape for every perturbation.
pub fn finite_difference_check<F>(mut f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain { op: "finite_difference_check", detail: alloc::format!("epsilon must be positive, got {eps}") });
    }
    let analytic = analytic_gradient(&mut f, x)?;
    let numeric = central_differences(&mut f, x, eps)?;
    Ok(analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max))
}

pub(crate) fn analytic_gradient<F>(f: &mut F, x: &Tensor) -> Result<Tensor>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    Ok(grads.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
}

pub(crate) fn central_differences<F>(f: &mut F, x: &Tensor, eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut eval = |probe: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(probe);
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out)?;
        if v.len() != 1 {
            return Err(Error::NotScalar(fmt_shape(v.shape())));
        }
        Ok(v.data()[0])
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    Ok(numeric)
}
