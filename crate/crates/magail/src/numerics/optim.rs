//! RMSprop updates and weight clipping.

use std::collections::HashMap;

use crate::error::Result;
use crate::numerics::params::ParamStore;

/// Running second-moment accumulators for RMSprop, keyed by parameter name.
/// Accumulators appear (zeroed) the first time a parameter is stepped, so one
/// state can outlive parameters being declared.
pub struct OptState {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub step_count: u64,
    acc: HashMap<String, Vec<f64>>,
}

impl OptState {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Self {
        OptState { lr, rho, eps, step_count: 0, acc: HashMap::new() }
    }

    /// Conventional defaults: ρ = 0.9, ε = 1e-8.
    pub fn rmsprop(lr: f64) -> Self {
        Self::new(lr, 0.9, 1e-8)
    }

    /// Accumulator for a parameter, if it has been stepped at least once.
    pub fn acc(&self, name: &str) -> Option<&[f64]> {
        self.acc.get(name).map(|v| v.as_slice())
    }
}

/// One RMSprop step over every parameter in the store:
/// `acc ← ρ·acc + (1−ρ)·g²`, then `p ← p − lr·g/(√acc + ε)`.
/// Gradients are left untouched (the caller zeroes them).
pub fn rmsprop_step(store: &mut ParamStore, opt: &mut OptState) -> Result<()> {
    for name in store.names() {
        let g = store.grad(&name)?.to_vec();
        let acc = opt.acc.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let mut new_data = store.value(&name)?.data().to_vec();
        for i in 0..g.len() {
            acc[i] = opt.rho * acc[i] + (1.0 - opt.rho) * g[i] * g[i];
            new_data[i] -= opt.lr * g[i] / (acc[i].sqrt() + opt.eps);
        }
        store.set_value(&name, new_data)?;
    }
    opt.step_count += 1;
    Ok(())
}

/// Clamps every parameter coordinate into `[−c, c]`. A non-finite `c`
/// disables clipping. Parameters already inside the bound are left as the
/// same tensors, so repeated application is bit-identical.
pub fn clip_params(store: &mut ParamStore, c: f64) -> Result<()> {
    clip_prefixed(store, "", c)
}

/// `clip_params` restricted to parameters whose name starts with `prefix`.
/// Stores are shared across model parts, so a norm constraint on one part
/// must not clamp the others.
pub fn clip_prefixed(store: &mut ParamStore, prefix: &str, c: f64) -> Result<()> {
    if !c.is_finite() {
        return Ok(());
    }
    for name in store.names() {
        if !name.starts_with(prefix) {
            continue;
        }
        let data = store.value(&name)?.data();
        if data.iter().all(|&x| (-c..=c).contains(&x)) {
            continue;
        }
        let clipped: Vec<f64> = data.iter().map(|&x| x.clamp(-c, c)).collect();
        store.set_value(&name, clipped)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn one_param(value: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec(value).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_grads_leave_params_and_decay_acc() {
        let mut s = one_param(vec![1.0, -2.0]);
        let mut opt = OptState::rmsprop(0.01);
        s.grad_add("p", &[1.0, 1.0]).unwrap();
        rmsprop_step(&mut s, &mut opt).unwrap();
        let after_first = s.value("p").unwrap().data().to_vec();
        let acc_first = opt.acc("p").unwrap().to_vec();

        s.zero_grads();
        rmsprop_step(&mut s, &mut opt).unwrap();
        assert_eq!(s.value("p").unwrap().data(), &after_first[..]);
        for (a, b) in opt.acc("p").unwrap().iter().zip(&acc_first) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        assert_eq!(opt.step_count, 2);
    }

    #[test]
    fn unit_grad_no_decay_no_eps_moves_by_lr() {
        let mut s = one_param(vec![1.0]);
        let mut opt = OptState::new(0.1, 0.0, 0.0);
        s.grad_add("p", &[1.0]).unwrap();
        rmsprop_step(&mut s, &mut opt).unwrap();
        assert!((s.value("p").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn second_identical_step_moves_less() {
        let mut s = one_param(vec![1.0]);
        let mut opt = OptState::rmsprop(1e-3);
        s.grad_add("p", &[1.0]).unwrap();
        rmsprop_step(&mut s, &mut opt).unwrap();
        let p1 = s.value("p").unwrap().data()[0];
        rmsprop_step(&mut s, &mut opt).unwrap();
        let p2 = s.value("p").unwrap().data()[0];
        let d1 = (1.0 - p1).abs();
        let d2 = (p1 - p2).abs();
        assert!(d2 < d1, "second step {d2} should shrink below first {d1}");
    }

    #[test]
    fn clip_bounds_values() {
        let mut s = one_param(vec![-5.0, 0.003, 5.0]);
        clip_params(&mut s, 0.01).unwrap();
        assert_eq!(s.value("p").unwrap().data(), &[-0.01, 0.003, 0.01]);
    }

    #[test]
    fn clip_is_idempotent_and_identity_within_bound() {
        let mut s = one_param(vec![-5.0, 0.003, 5.0]);
        clip_params(&mut s, 0.01).unwrap();
        let once = s.value("p").unwrap().clone();
        clip_params(&mut s, 0.01).unwrap();
        assert!(s.value("p").unwrap().bit_eq(&once));

        let mut t = one_param(vec![-0.0, 0.004, -0.009]);
        let before = t.value("p").unwrap().clone();
        clip_params(&mut t, 0.01).unwrap();
        assert!(t.value("p").unwrap().bit_eq(&before));
    }

    #[test]
    fn infinite_bound_disables_clipping() {
        let mut s = one_param(vec![-1e12, 3e7]);
        let before = s.value("p").unwrap().clone();
        clip_params(&mut s, f64::INFINITY).unwrap();
        assert!(s.value("p").unwrap().bit_eq(&before));
    }

    #[test]
    fn prefixed_clip_skips_other_parameters() {
        let mut s = ParamStore::new();
        s.insert("critic/w", Tensor::new(vec![2], vec![-5.0, 5.0]).unwrap()).unwrap();
        s.insert("policy/w", Tensor::new(vec![2], vec![-5.0, 5.0]).unwrap()).unwrap();
        clip_prefixed(&mut s, "critic", 0.01).unwrap();
        assert_eq!(s.value("critic/w").unwrap().data(), &[-0.01, 0.01]);
        assert_eq!(s.value("policy/w").unwrap().data(), &[-5.0, 5.0]);
    }
}
