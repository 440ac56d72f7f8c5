//! Wasserstein critic over (augmented state, action) pairs: scoring,
//! the clipped ascent update, and a batched scoring path for rollouts.

use crate::error::{Error, Result};
use crate::numerics::{
    clip_prefixed, rmsprop_step, OptState, ParamStore, RngStream, Tape, Tensor, TensorRef,
};

pub const CRITIC_PREFIX: &str = "critic";
pub const CRITIC_HIDDEN: (usize, usize) = (64, 64);
pub const CLIP_DEFAULT: f64 = 0.01;
/// Fresh weights start inside the clip box so the first update does not
/// collapse them onto its faces.
pub const CRITIC_INIT_STD: f64 = CLIP_DEFAULT / 2.0;

/// Matched (state, action) arrays from one source (expert or policy).
#[derive(Clone, Debug)]
pub struct CriticBatch {
    states: Vec<Tensor>,
    actions: Vec<Vec<f64>>,
}

impl CriticBatch {
    pub fn new(states: Vec<Tensor>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput { what: "critic batch" });
        }
        if states.len() != actions.len() {
            return Err(Error::shape(
                "critic batch",
                format!("{} states vs {} actions", states.len(), actions.len()),
            ));
        }
        let dim = states[0].len();
        for (i, s) in states.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::shape(
                    "critic batch",
                    format!("state {i} has {} entries, state 0 has {dim}", s.len()),
                ));
            }
        }
        for (i, a) in actions.iter().enumerate() {
            if a.len() != 3 {
                return Err(Error::shape(
                    "critic batch",
                    format!("action {i} has {} entries, expected 3", a.len()),
                ));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("critic batch action {i}") });
            }
        }
        Ok(CriticBatch { states, actions })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Tensor] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }
}

#[derive(Clone, Copy)]
pub struct CriticRefs {
    pub w1: TensorRef,
    pub b1: TensorRef,
    pub w2: TensorRef,
    pub b2: TensorRef,
    pub w3: TensorRef,
    pub b3: TensorRef,
}

pub fn init_critic_params(
    store: &mut ParamStore,
    rng: &mut RngStream,
    aug_dim: usize,
    hidden: (usize, usize),
) -> Result<()> {
    let in_dim = aug_dim + 3;
    let (h1, h2) = hidden;
    store.insert("critic/w1", rng.normal_tensor(vec![h1, in_dim], CRITIC_INIT_STD))?;
    store.insert("critic/b1", Tensor::zeros(vec![h1]))?;
    store.insert("critic/w2", rng.normal_tensor(vec![h2, h1], CRITIC_INIT_STD))?;
    store.insert("critic/b2", Tensor::zeros(vec![h2]))?;
    store.insert("critic/w3", rng.normal_tensor(vec![1, h2], CRITIC_INIT_STD))?;
    store.insert("critic/b3", Tensor::zeros(vec![1]))?;
    Ok(())
}

pub fn bind_critic(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Result<CriticRefs> {
    let mut get = |name: &str| -> Result<TensorRef> {
        if trainable {
            tape.param(store, name)
        } else {
            Ok(tape.constant(store.value(name)?.clone()))
        }
    };
    Ok(CriticRefs {
        w1: get("critic/w1")?,
        b1: get("critic/b1")?,
        w2: get("critic/w2")?,
        b2: get("critic/b2")?,
        w3: get("critic/w3")?,
        b3: get("critic/b3")?,
    })
}

/// Score of one (augmented state, action) pair as a `[1]` tape node.
pub fn critic_score_on_tape(
    tape: &mut Tape,
    refs: CriticRefs,
    s_aug: TensorRef,
    action: &[f64],
) -> Result<TensorRef> {
    if action.len() != 3 {
        return Err(Error::shape(
            "critic_score",
            format!("action has {} entries, expected 3", action.len()),
        ));
    }
    let a = tape.constant(Tensor::new(vec![3], action.to_vec())?);
    let x = tape.concat(&[s_aug, a])?;
    let z1 = tape.matvec(refs.w1, x)?;
    let z1 = tape.add(z1, refs.b1)?;
    let h1 = tape.tanh(z1)?;
    let z2 = tape.matvec(refs.w2, h1)?;
    let z2 = tape.add(z2, refs.b2)?;
    let h2 = tape.tanh(z2)?;
    let out = tape.matvec(refs.w3, h2)?;
    tape.add(out, refs.b3)
}

pub fn critic_score(store: &ParamStore, s_aug: &Tensor, action: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let refs = bind_critic(&mut tape, store, false)?;
    let s = tape.constant(s_aug.clone());
    let score = critic_score_on_tape(&mut tape, refs, s, action)?;
    tape.value(score).scalar_value()
}

fn transposed(t: &Tensor) -> Result<Tensor> {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data)
}

/// Scores a whole batch through matrix products; identical numbers to
/// item-by-item scoring, one tape instead of n.
pub fn critic_score_batch(store: &ParamStore, batch: &CriticBatch) -> Result<Vec<f64>> {
    let n = batch.len();
    let aug_dim = batch.states[0].len();
    let in_dim = aug_dim + 3;
    let mut rows = Vec::with_capacity(n * in_dim);
    for (s, a) in batch.states.iter().zip(&batch.actions) {
        rows.extend_from_slice(s.data());
        rows.extend_from_slice(a);
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![n, in_dim], rows)?);
    let w1t = tape.constant(transposed(store.value("critic/w1")?)?);
    let w2t = tape.constant(transposed(store.value("critic/w2")?)?);
    let w3t = tape.constant(transposed(store.value("critic/w3")?)?);
    let b1 = tape.constant(store.value("critic/b1")?.clone());
    let b2 = tape.constant(store.value("critic/b2")?.clone());
    let b3 = tape.constant(store.value("critic/b3")?.clone());

    let z1 = tape.matmul(x, w1t)?;
    let z1 = tape.add_row_broadcast(z1, b1)?;
    let h1 = tape.tanh(z1)?;
    let z2 = tape.matmul(h1, w2t)?;
    let z2 = tape.add_row_broadcast(z2, b2)?;
    let h2 = tape.tanh(z2)?;
    let out = tape.matmul(h2, w3t)?;
    let out = tape.add_row_broadcast(out, b3)?;
    Ok(tape.value(out).data().to_vec())
}

/// One clipped Wasserstein ascent step: maximize
/// mean(score(expert)) - mean(score(policy)) with RMSprop, then clamp every
/// parameter into [-c, c]. Returns the objective before the step.
pub fn critic_update(
    store: &mut ParamStore,
    expert: &CriticBatch,
    policy: &CriticBatch,
    opt: &mut OptState,
    c: f64,
) -> Result<f64> {
    if expert.is_empty() || policy.is_empty() {
        return Err(Error::EmptyInput { what: "critic update batch" });
    }
    let mut tape = Tape::new();
    let refs = bind_critic(&mut tape, store, true)?;
    // Items are laid down expert/policy interleaved so that when the two
    // batches are identical, each +g/-g contribution pair meets an exactly
    // zero accumulator during backward and the total gradient is exactly 0.
    let mut e_scores = Vec::with_capacity(expert.len());
    let mut p_scores = Vec::with_capacity(policy.len());
    for i in 0..expert.len().max(policy.len()) {
        if i < expert.len() {
            let s_ref = tape.constant(expert.states[i].clone());
            e_scores.push(critic_score_on_tape(&mut tape, refs, s_ref, &expert.actions[i])?);
        }
        if i < policy.len() {
            let s_ref = tape.constant(policy.states[i].clone());
            p_scores.push(critic_score_on_tape(&mut tape, refs, s_ref, &policy.actions[i])?);
        }
    }
    let e_all = tape.concat(&e_scores)?;
    let mean_e = tape.mean(e_all)?;
    let p_all = tape.concat(&p_scores)?;
    let mean_p = tape.mean(p_all)?;
    let objective = tape.sub(mean_e, mean_p)?;
    let value = tape.value(objective).scalar_value()?;

    store.zero_grads();
    tape.backward(objective)?;
    tape.grads_into(store)?;
    // The optimizer descends; flipping the gradient ascends the objective.
    store.scale_grads(-1.0);
    rmsprop_step(store, opt)?;
    // The norm constraint is the critic's alone; the store also carries the
    // generator's parameters, which must stay untouched.
    clip_prefixed(store, CRITIC_PREFIX, c)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::tags;
    use crate::numerics::{clip_params, finite_diff_grad, rel_err, DEFAULT_FD_STEP};

    fn small_critic(seed: u64, aug_dim: usize) -> ParamStore {
        let mut store = ParamStore::with_seed(seed);
        let mut rng = RngStream::from_tags(seed, &[tags::PARAM_INIT]);
        init_critic_params(&mut store, &mut rng, aug_dim, (5, 4)).unwrap();
        store
    }

    fn random_batch(rng: &mut RngStream, n: usize, aug_dim: usize, shift: f64) -> CriticBatch {
        let states = (0..n)
            .map(|_| {
                let mut t = rng.normal_tensor(vec![aug_dim], 1.0).data().to_vec();
                for v in &mut t {
                    *v += shift;
                }
                Tensor::new(vec![aug_dim], t).unwrap()
            })
            .collect();
        let actions = (0..n)
            .map(|_| vec![rng.uniform_in(-1.0, 1.0), rng.uniform(), rng.uniform()])
            .collect();
        CriticBatch::new(states, actions).unwrap()
    }

    #[test]
    fn zero_weights_score_zero() {
        let mut store = small_critic(1, 9);
        for name in store.names() {
            let n = store.value(&name).unwrap().len();
            store.set_value(&name, vec![0.0; n]).unwrap();
        }
        let mut rng = RngStream::from_tags(2, &[tags::EVAL]);
        for _ in 0..5 {
            let s = rng.normal_tensor(vec![9], 2.0);
            let score = critic_score(&store, &s, &[0.3, 0.5, 0.9]).unwrap();
            assert_eq!(score, 0.0);
        }
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let mut store = small_critic(3, 9);
        let mut rng = RngStream::from_tags(4, &[tags::GRAD_CHECK]);
        let s = rng.normal_tensor(vec![9], 1.0);
        let a = [0.2, 0.7, 0.1];

        store.zero_grads();
        let mut tape = Tape::new();
        let refs = bind_critic(&mut tape, &store, true).unwrap();
        let s_ref = tape.constant(s.clone());
        let score = critic_score_on_tape(&mut tape, refs, s_ref, &a).unwrap();
        let scalar = tape.sum(score).unwrap();
        tape.backward(scalar).unwrap();
        tape.grads_into(&mut store).unwrap();

        let fd = finite_diff_grad(&store, DEFAULT_FD_STEP, |st| critic_score(st, &s, &a)).unwrap();
        for name in store.names() {
            let g = store.grad(&name).unwrap();
            for (x, y) in g.iter().zip(&fd[&name]) {
                assert!(rel_err(*x, *y) <= 1e-4, "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn batched_scoring_equals_per_item_scoring() {
        let store = small_critic(5, 9);
        let mut rng = RngStream::from_tags(6, &[tags::EVAL]);
        let batch = random_batch(&mut rng, 17, 9, 0.0);
        let batched = critic_score_batch(&store, &batch).unwrap();
        assert_eq!(batched.len(), 17);
        for (i, (s, a)) in batch.states().iter().zip(batch.actions()).enumerate() {
            let single = critic_score(&store, s, a).unwrap();
            assert_eq!(
                batched[i].to_bits(),
                single.to_bits(),
                "item {i}: {} vs {single}",
                batched[i]
            );
        }
    }

    #[test]
    fn identical_batches_cancel_and_leave_params_inside_the_box() {
        let mut store = small_critic(7, 9);
        // Start from weights already inside the clip box, so the clip pass
        // after the update has nothing left to do.
        clip_params(&mut store, CLIP_DEFAULT).unwrap();
        let mut rng = RngStream::from_tags(8, &[tags::EVAL]);
        let batch = random_batch(&mut rng, 6, 9, 0.0);
        let before = store.clone();
        let mut opt = OptState::rmsprop(5e-3);
        let obj = critic_update(&mut store, &batch, &batch, &mut opt, CLIP_DEFAULT).unwrap();
        assert_eq!(obj, 0.0);
        // Zero gradient means a zero RMSprop step.
        for name in before.names() {
            assert!(store.value(&name).unwrap().bit_eq(before.value(&name).unwrap()));
        }
    }

    #[test]
    fn clip_bound_holds_after_every_update() {
        let mut store = small_critic(9, 9);
        let mut rng = RngStream::from_tags(10, &[tags::EVAL]);
        let expert = random_batch(&mut rng, 8, 9, 1.0);
        let policy = random_batch(&mut rng, 8, 9, -1.0);
        let c = 0.002;
        let mut opt = OptState::rmsprop(1e-2);
        for _ in 0..20 {
            critic_update(&mut store, &expert, &policy, &mut opt, c).unwrap();
            for name in store.names() {
                let max = store.value(&name).unwrap().max_abs();
                assert!(max <= c + 1e-18, "{name} exceeds clip: {max}");
            }
        }
    }

    #[test]
    fn updates_leave_foreign_parameters_untouched() {
        let mut store = small_critic(13, 9);
        store.insert("policy/log_std", Tensor::new(vec![2], vec![-1.8, 5.0]).unwrap()).unwrap();
        store.insert("embed/w", Tensor::new(vec![2], vec![0.7, -0.4]).unwrap()).unwrap();
        let mut rng = RngStream::from_tags(14, &[tags::EVAL]);
        let expert = random_batch(&mut rng, 6, 9, 1.0);
        let policy = random_batch(&mut rng, 6, 9, -1.0);
        let mut opt = OptState::rmsprop(1e-2);
        for _ in 0..5 {
            critic_update(&mut store, &expert, &policy, &mut opt, 0.002).unwrap();
        }
        assert_eq!(store.value("policy/log_std").unwrap().data(), &[-1.8, 5.0]);
        assert_eq!(store.value("embed/w").unwrap().data(), &[0.7, -0.4]);
    }

    #[test]
    fn updates_separate_separable_batches() {
        let mut store = small_critic(11, 9);
        let mut rng = RngStream::from_tags(12, &[tags::EVAL]);
        let expert = random_batch(&mut rng, 16, 9, 1.5);
        let policy = random_batch(&mut rng, 16, 9, -1.5);
        let mut opt = OptState::rmsprop(5e-3);
        for _ in 0..100 {
            critic_update(&mut store, &expert, &policy, &mut opt, CLIP_DEFAULT).unwrap();
        }
        let me: f64 = critic_score_batch(&store, &expert).unwrap().iter().sum::<f64>() / 16.0;
        let mp: f64 = critic_score_batch(&store, &policy).unwrap().iter().sum::<f64>() / 16.0;
        assert!(me > mp, "expert mean {me} should exceed policy mean {mp}");
    }

    #[test]
    fn empty_batches_are_rejected() {
        assert!(CriticBatch::new(vec![], vec![]).is_err());
        let mut rng = RngStream::from_tags(13, &[tags::EVAL]);
        let states = vec![rng.normal_tensor(vec![9], 1.0)];
        let actions = vec![vec![0.0, 0.0]];
        assert!(CriticBatch::new(states, actions).is_err());
    }

    #[test]
    fn update_is_deterministic() {
        let mut rng = RngStream::from_tags(14, &[tags::EVAL]);
        let expert = random_batch(&mut rng, 5, 9, 0.8);
        let policy = random_batch(&mut rng, 5, 9, -0.8);
        let run = || {
            let mut store = small_critic(15, 9);
            let mut opt = OptState::rmsprop(3e-3);
            let mut objs = Vec::new();
            for _ in 0..5 {
                objs.push(
                    critic_update(&mut store, &expert, &policy, &mut opt, CLIP_DEFAULT).unwrap(),
                );
            }
            (objs, store)
        };
        let (o1, s1) = run();
        let (o2, s2) = run();
        assert_eq!(o1, o2);
        for name in s1.names() {
            assert!(s1.value(&name).unwrap().bit_eq(s2.value(&name).unwrap()));
        }
    }
}
