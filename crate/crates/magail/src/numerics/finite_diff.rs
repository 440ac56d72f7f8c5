//! Central-difference gradient oracle used to validate the tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Gradient of `f` with respect to every parameter coordinate, estimated as
/// `(f(p+h) − f(p−h)) / (2h)`. `f` must be deterministic; it sees a store
/// whose other parameters are untouched.
pub fn finite_diff_grad<F>(
    store: &ParamStore,
    h: f64,
    mut f: F,
) -> Result<HashMap<String, Vec<f64>>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::config("finite_diff step", format!("h must be positive, got {h}")));
    }
    let mut out = HashMap::new();
    for name in store.names() {
        let base = store.value(&name)?.data().to_vec();
        let shape = store.value(&name)?.shape().to_vec();
        let mut grad = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut eval = |x: f64| -> Result<f64> {
                let mut probe = store.clone();
                let mut data = base.clone();
                data[i] = x;
                probe.set_value(&name, data)?;
                let y = f(&probe)?;
                if !y.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("finite_diff probe of {name}[{i}]"),
                    });
                }
                Ok(y)
            };
            let fp = eval(base[i] + h)?;
            let fm = eval(base[i] - h)?;
            grad[i] = (fp - fm) / (2.0 * h);
        }
        debug_assert_eq!(shape.iter().product::<usize>(), grad.len());
        out.insert(name, grad);
    }
    Ok(out)
}

/// Relative error with a floored denominator, the acceptance measure for
/// analytic-vs-numeric gradient agreement.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Convenience wrapper re-shaping the flat result back into tensors.
pub fn finite_diff_tensors<F>(
    store: &ParamStore,
    h: f64,
    f: F,
) -> Result<HashMap<String, Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let flat = finite_diff_grad(store, h, f)?;
    let mut out = HashMap::new();
    for (name, data) in flat {
        let shape = store.value(&name)?.shape().to_vec();
        out.insert(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}
