//! Central-difference gradient estimation. This is the independent oracle the
//! tape is audited against; it never touches the backward sweep.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Symmetric relative error with an absolute floor of 1.0, so near-zero
/// gradients are compared absolutely (central differences carry ~1e-11 of
/// roundoff noise that a pure ratio would amplify without bound).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central differences (f(x+e) - f(x-e)) / 2e for every scalar entry of every
/// parameter. Returns gradients aligned with `params.entries()` order.
pub fn finite_diff_gradient<F>(mut f: F, params: &ParamStore, step: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "finite difference step must be > 0, got {step}"
        )));
    }
    let mut probe = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for entry in params.entries() {
        let name = entry.name.clone();
        let mut grad = Tensor::zeros(entry.value.shape());
        for i in 0..entry.value.len() {
            let original = entry.value.data()[i];

            let mut plus = entry.value.clone();
            plus.data_mut()[i] = original + step;
            probe.set(&name, plus)?;
            let f_plus = f(&probe)?;

            let mut minus = entry.value.clone();
            minus.data_mut()[i] = original - step;
            probe.set(&name, minus)?;
            let f_minus = f(&probe)?;

            probe.set(&name, entry.value.clone())?;

            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::non_finite(format!(
                    "objective returned {f_plus} / {f_minus} while probing {name:?}[{i}]"
                )));
            }
            grad.data_mut()[i] = (f_plus - f_minus) / (2.0 * step);
        }
        grads.push(grad);
    }
    Ok(grads)
}
