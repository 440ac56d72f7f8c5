//! State embedding, state augmentation, the stochastic policy, behavioural
//! cloning, and the static Gaussian baseline.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::laneworld::dataset::Dataset;
use crate::laneworld::world::{Action, FEATURE_DIM};
use crate::memory::{self, MemoryConfig, MemoryState};
use crate::numerics::{
    rmsprop_step, OptState, ParamStore, RngStream, Tape, Tensor, TensorRef,
};

pub const ACTION_DIM: usize = 3;
pub const EMBED_HIDDEN: usize = 64;
pub const POLICY_HIDDEN: usize = 64;
pub const STD_MIN: f64 = 1e-3;
pub const LOG_STD_INIT: f64 = -0.5;
const LN_2PI: f64 = 1.8378770664093453;

/// Parameter name prefixes for the model's pieces; checkpoints group
/// tensors by these.
pub const EMBED_PREFIX: &str = "embed";
pub const POLICY_PREFIX: &str = "policy";
pub const LOCAL_PREFIX: &str = "local";
pub const GLOBAL_PREFIX: &str = "global";

/// Fixed per-feature scales that bring every observation channel into
/// roughly [-1, 1] before the embedding (angles are already order one,
/// speeds and ranges are not). A constant, not a learned normalizer, so
/// rollouts stay deterministic functions of the parameters.
pub fn feature_scales() -> Vec<f64> {
    let mut s = vec![1.0; FEATURE_DIM];
    s[0] = PI; // heading angle
    s[1] = 1.0; // lateral position, already in lane widths
    s[2] = 216.0; // speed in km/h at the 60 m/s cap
    s[3] = 1.0; // vertical speed, identically zero
    for v in s.iter_mut().take(23).skip(4) {
        *v = 200.0; // range finders
    }
    s[23] = 200.0; // front gap
    s[24] = 50.0; // back gap
    s
}

fn prescale(f: &[f64]) -> Result<Tensor> {
    if f.len() != FEATURE_DIM {
        return Err(Error::shape(
            "embed",
            format!("expected {FEATURE_DIM} features, got {}", f.len()),
        ));
    }
    let scales = feature_scales();
    let data: Vec<f64> = f.iter().zip(&scales).map(|(v, s)| v / s).collect();
    Tensor::new(vec![FEATURE_DIM], data)
}

/// Tape bindings for the two-layer embedding network.
#[derive(Clone, Copy)]
pub struct EmbedRefs {
    pub w1: TensorRef,
    pub b1: TensorRef,
    pub w2: TensorRef,
    pub b2: TensorRef,
}

pub fn init_embed_params(
    store: &mut ParamStore,
    rng: &mut RngStream,
    hidden: usize,
    l: usize,
) -> Result<()> {
    store.insert("embed/w1", rng.normal_tensor(vec![hidden, FEATURE_DIM], 0.2))?;
    store.insert("embed/b1", Tensor::zeros(vec![hidden]))?;
    store.insert("embed/w2", rng.normal_tensor(vec![l, hidden], 1.0 / (hidden as f64).sqrt()))?;
    store.insert("embed/b2", Tensor::zeros(vec![l]))?;
    Ok(())
}

pub fn bind_embed(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Result<EmbedRefs> {
    let mut get = |name: &str| -> Result<TensorRef> {
        if trainable {
            tape.param(store, name)
        } else {
            Ok(tape.constant(store.value(name)?.clone()))
        }
    };
    Ok(EmbedRefs {
        w1: get("embed/w1")?,
        b1: get("embed/b1")?,
        w2: get("embed/w2")?,
        b2: get("embed/b2")?,
    })
}

/// Two affine layers with tanh: prescaled features to an l-dim embedding,
/// every output coordinate strictly inside (-1, 1).
pub fn embed_on_tape(tape: &mut Tape, refs: EmbedRefs, f: &[f64]) -> Result<TensorRef> {
    let x = prescale(f)?;
    let x = tape.constant(x);
    let a1 = tape.matvec(refs.w1, x)?;
    let a1 = tape.add(a1, refs.b1)?;
    let h = tape.tanh(a1)?;
    let a2 = tape.matvec(refs.w2, h)?;
    let a2 = tape.add(a2, refs.b2)?;
    tape.tanh(a2)
}

pub fn embed(store: &ParamStore, f: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let refs = bind_embed(&mut tape, store, false)?;
    let out = embed_on_tape(&mut tape, refs, f)?;
    Ok(tape.value(out).clone())
}

/// `[s_embed; m_local; m_global]`, all three of equal width.
pub fn augment(s_embed: &Tensor, m_local: &Tensor, m_global: &Tensor) -> Result<Tensor> {
    let l = s_embed.len();
    if m_local.len() != l || m_global.len() != l {
        return Err(Error::shape(
            "augment",
            format!("parts {l}, {}, {} differ", m_local.len(), m_global.len()),
        ));
    }
    let mut data = Vec::with_capacity(3 * l);
    data.extend_from_slice(s_embed.data());
    data.extend_from_slice(m_local.data());
    data.extend_from_slice(m_global.data());
    Tensor::new(vec![3 * l], data)
}

pub fn augment_on_tape(
    tape: &mut Tape,
    s_embed: TensorRef,
    m_local: TensorRef,
    m_global: TensorRef,
) -> Result<TensorRef> {
    let l = tape.value(s_embed).len();
    for (name, r) in [("local memory", m_local), ("global memory", m_global)] {
        let got = tape.value(r).len();
        if got != l {
            return Err(Error::shape("augment", format!("{name} width {got}, embedding {l}")));
        }
    }
    tape.concat(&[s_embed, m_local, m_global])
}

/// Tape bindings for the policy trunk and heads.
#[derive(Clone, Copy)]
pub struct PolicyRefs {
    pub trunk_w: TensorRef,
    pub trunk_b: TensorRef,
    pub mean_w: TensorRef,
    pub mean_b: TensorRef,
    pub value_w: TensorRef,
    pub value_b: TensorRef,
    pub log_std: TensorRef,
}

/// Policy outputs as tape nodes; `log_std` is already clamped so
/// `exp(log_std)` lies in [STD_MIN, 1].
#[derive(Clone, Copy)]
pub struct PolicyOut {
    pub mean: TensorRef,
    pub log_std: TensorRef,
    pub value: TensorRef,
}

pub fn init_policy_params(
    store: &mut ParamStore,
    rng: &mut RngStream,
    l: usize,
    hidden: usize,
) -> Result<()> {
    let aug = 3 * l;
    store.insert("policy/trunk_w", rng.normal_tensor(vec![hidden, aug], 1.0 / (aug as f64).sqrt()))?;
    store.insert("policy/trunk_b", Tensor::zeros(vec![hidden]))?;
    let head_std = 0.1 / (hidden as f64).sqrt();
    store.insert("policy/mean_w", rng.normal_tensor(vec![ACTION_DIM, hidden], head_std))?;
    store.insert("policy/mean_b", Tensor::zeros(vec![ACTION_DIM]))?;
    store.insert("policy/value_w", rng.normal_tensor(vec![1, hidden], head_std))?;
    store.insert("policy/value_b", Tensor::zeros(vec![1]))?;
    store.insert(
        "policy/log_std",
        Tensor::new(vec![ACTION_DIM], vec![LOG_STD_INIT; ACTION_DIM])?,
    )?;
    Ok(())
}

pub fn bind_policy(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Result<PolicyRefs> {
    let mut get = |name: &str| -> Result<TensorRef> {
        if trainable {
            tape.param(store, name)
        } else {
            Ok(tape.constant(store.value(name)?.clone()))
        }
    };
    Ok(PolicyRefs {
        trunk_w: get("policy/trunk_w")?,
        trunk_b: get("policy/trunk_b")?,
        mean_w: get("policy/mean_w")?,
        mean_b: get("policy/mean_b")?,
        value_w: get("policy/value_w")?,
        value_b: get("policy/value_b")?,
        log_std: get("policy/log_std")?,
    })
}

pub fn policy_forward_on_tape(
    tape: &mut Tape,
    refs: PolicyRefs,
    s_aug: TensorRef,
) -> Result<PolicyOut> {
    let a = tape.matvec(refs.trunk_w, s_aug)?;
    let a = tape.add(a, refs.trunk_b)?;
    let h = tape.tanh(a)?;
    let mean = tape.matvec(refs.mean_w, h)?;
    let mean = tape.add(mean, refs.mean_b)?;
    let value = tape.matvec(refs.value_w, h)?;
    let value = tape.add(value, refs.value_b)?;
    let log_std = tape.clamp(refs.log_std, STD_MIN.ln(), 0.0)?;
    Ok(PolicyOut { mean, log_std, value })
}

/// Plain-value forward pass: (mean, std, value estimate).
pub fn policy_forward(store: &ParamStore, s_aug: &Tensor) -> Result<(Tensor, Tensor, f64)> {
    let mut tape = Tape::new();
    let refs = bind_policy(&mut tape, store, false)?;
    let s = tape.constant(s_aug.clone());
    let out = policy_forward_on_tape(&mut tape, refs, s)?;
    let mean = tape.value(out.mean).clone();
    let std_data: Vec<f64> = tape.value(out.log_std).data().iter().map(|v| v.exp()).collect();
    let std = Tensor::new(vec![ACTION_DIM], std_data)?;
    let value = tape.value(out.value).data()[0];
    Ok((mean, std, value))
}

/// Maps an unsquashed Gaussian draw to the control ranges:
/// steering tanh, throttle and brake sigmoid.
pub fn squash(u: &[f64]) -> Result<Action> {
    if u.len() != ACTION_DIM {
        return Err(Error::shape("squash", format!("expected 3 entries, got {}", u.len())));
    }
    Action::new(
        u[0].tanh(),
        crate::numerics::tape::sigmoid(u[1]),
        crate::numerics::tape::sigmoid(u[2]),
    )
}

/// The squashed policy mean as a deterministic action.
pub fn mean_action(mean: &Tensor) -> Result<Action> {
    squash(mean.data())
}

pub fn squash_on_tape(tape: &mut Tape, mean: TensorRef) -> Result<TensorRef> {
    let s = tape.slice(mean, 0, 1)?;
    let s = tape.tanh(s)?;
    let a = tape.slice(mean, 1, 1)?;
    let a = tape.sigmoid(a)?;
    let b = tape.slice(mean, 2, 1)?;
    let b = tape.sigmoid(b)?;
    tape.concat(&[s, a, b])
}

/// Diagonal Gaussian log density of the unsquashed draw `u`. The squash map
/// is deliberately not corrected for: probability ratios between policies
/// that share the convention are unaffected.
pub fn log_prob_value(mean: &[f64], std: &[f64], u: &[f64]) -> Result<f64> {
    if mean.len() != u.len() || std.len() != u.len() {
        return Err(Error::shape(
            "log_prob",
            format!("dims {} / {} / {}", mean.len(), std.len(), u.len()),
        ));
    }
    let mut lp = -0.5 * LN_2PI * u.len() as f64;
    for i in 0..u.len() {
        if !(std[i] > 0.0) {
            return Err(Error::NonFinite { context: format!("std[{i}] = {}", std[i]) });
        }
        let z = (u[i] - mean[i]) / std[i];
        lp += -0.5 * z * z - std[i].ln();
    }
    Ok(lp)
}

/// The same density as a tape node, differentiable through `mean` and
/// `log_std` (clamped).
pub fn log_prob_on_tape(
    tape: &mut Tape,
    mean: TensorRef,
    log_std: TensorRef,
    u: &[f64],
) -> Result<TensorRef> {
    let dim = tape.value(mean).len();
    if u.len() != dim {
        return Err(Error::shape("log_prob", format!("u has {} entries, mean {dim}", u.len())));
    }
    let u_ref = tape.constant(Tensor::new(vec![dim], u.to_vec())?);
    let diff = tape.sub(u_ref, mean)?;
    let neg_log_std = tape.scale(log_std, -1.0)?;
    let inv_std = tape.exp(neg_log_std)?;
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.mul(z, z)?;
    let quad = tape.sum(z2)?;
    let quad = tape.scale(quad, -0.5)?;
    let logdet = tape.sum(log_std)?;
    let fit = tape.sub(quad, logdet)?;
    tape.add_scalar(fit, -0.5 * LN_2PI * dim as f64)
}

/// A seeded draw from the policy head: the raw sample `u`, its squashed
/// action, and the pre-squash log density.
#[derive(Clone, Debug)]
pub struct ActionSample {
    pub action: Action,
    pub u: Vec<f64>,
    pub log_prob: f64,
}

pub fn sample_action(mean: &Tensor, std: &Tensor, rng: &mut RngStream) -> Result<ActionSample> {
    if mean.len() != ACTION_DIM || std.len() != ACTION_DIM {
        return Err(Error::shape(
            "sample_action",
            format!("mean {} / std {} entries", mean.len(), std.len()),
        ));
    }
    let mut u = Vec::with_capacity(ACTION_DIM);
    for i in 0..ACTION_DIM {
        u.push(mean.data()[i] + std.data()[i] * rng.normal());
    }
    let action = squash(&u)?;
    let log_prob = log_prob_value(mean.data(), std.data(), &u)?;
    Ok(ActionSample { action, u, log_prob })
}

/// Memory widths used when teacher-forcing demonstrations through the model.
#[derive(Clone, Copy, Debug)]
pub struct MemoryDims {
    pub l: usize,
    pub k_local: usize,
    pub k_global: usize,
}

/// Runs the current embedding and both memories over recorded state
/// sequences without gradients: the local memory restarts with each
/// trajectory, the global memory persists across the whole set. Returns the
/// (local, global) read vectors per record.
pub fn teacher_forced_memories(
    store: &ParamStore,
    dims: MemoryDims,
    trajectories: &[&[Vec<f64>]],
) -> Result<Vec<Vec<(Tensor, Tensor)>>> {
    let local_cfg = MemoryConfig::new(dims.k_local, dims.l)?;
    let global_cfg = MemoryConfig::new(dims.k_global, dims.l)?;
    let mut global = MemoryState::fresh(global_cfg);
    let mut out = Vec::with_capacity(trajectories.len());
    for states in trajectories {
        let mut local = MemoryState::fresh(local_cfg);
        let mut rows = Vec::with_capacity(states.len());
        for f in *states {
            let s_e = embed(store, f)?;
            let (ro_l, next_l) = memory::step(store, LOCAL_PREFIX, &local, &s_e)?;
            let (ro_g, next_g) = memory::step(store, GLOBAL_PREFIX, &global, &s_e)?;
            local = next_l;
            global = next_g;
            rows.push((ro_l.m, ro_g.m));
        }
        out.push(rows);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct BcConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dims: MemoryDims,
}

#[derive(Clone, Copy, Debug)]
pub struct BcReport {
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
    pub initial_holdout_mse: f64,
    pub final_holdout_mse: f64,
    pub epochs_run: usize,
}

struct BcRecord<'a> {
    features: &'a [f64],
    action: &'a [f64],
    m_local: Tensor,
    m_global: Tensor,
}

fn bc_record_loss(
    tape: &mut Tape,
    store: &ParamStore,
    rec: &BcRecord,
    trainable: bool,
) -> Result<TensorRef> {
    let e_refs = bind_embed(tape, store, trainable)?;
    let p_refs = bind_policy(tape, store, trainable)?;
    let s_e = embed_on_tape(tape, e_refs, rec.features)?;
    let m_l = tape.constant(rec.m_local.clone());
    let m_g = tape.constant(rec.m_global.clone());
    let aug = augment_on_tape(tape, s_e, m_l, m_g)?;
    let out = policy_forward_on_tape(tape, p_refs, aug)?;
    let pred = squash_on_tape(tape, out.mean)?;
    let target = tape.constant(Tensor::new(vec![ACTION_DIM], rec.action.to_vec())?);
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

fn bc_mse(store: &ParamStore, records: &[BcRecord]) -> Result<f64> {
    let mut total = 0.0;
    for rec in records {
        let mut tape = Tape::new();
        let loss = bc_record_loss(&mut tape, store, rec, false)?;
        total += tape.value(loss).scalar_value()?;
    }
    Ok(total / records.len() as f64)
}

fn bc_records<'a>(
    store: &ParamStore,
    dims: MemoryDims,
    trajs: &[&'a crate::laneworld::dataset::Trajectory],
) -> Result<Vec<BcRecord<'a>>> {
    let state_seqs: Vec<&[Vec<f64>]> = trajs.iter().map(|t| t.states.as_slice()).collect();
    let memories = teacher_forced_memories(store, dims, &state_seqs)?;
    let mut records = Vec::new();
    for (traj, rows) in trajs.iter().zip(memories) {
        for (t, (m_local, m_global)) in rows.into_iter().enumerate() {
            records.push(BcRecord {
                features: &traj.states[t],
                action: &traj.actions[t],
                m_local,
                m_global,
            });
        }
    }
    Ok(records)
}

/// Behavioural cloning: full-batch RMSprop on the mean squared error between
/// the squashed policy mean and the expert action, with memory read vectors
/// teacher-forced from the demonstrations. Every fifth trajectory is held
/// out to measure generalization.
pub fn bc_train(store: &mut ParamStore, dataset: &Dataset, cfg: &BcConfig) -> Result<BcReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput { what: "behavioural cloning dataset" });
    }
    let mut train_trajs = Vec::new();
    let mut holdout_trajs = Vec::new();
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        if i % 5 == 4 {
            holdout_trajs.push(traj);
        } else {
            train_trajs.push(traj);
        }
    }
    if holdout_trajs.is_empty() {
        // Tiny datasets: generalization is unmeasurable, report training MSE.
        holdout_trajs = train_trajs.clone();
    }

    let initial_train_mse = bc_mse(store, &bc_records(store, cfg.dims, &train_trajs)?)?;
    let initial_holdout_mse = bc_mse(store, &bc_records(store, cfg.dims, &holdout_trajs)?)?;

    let mut opt = OptState::rmsprop(cfg.lr);
    let mut final_train_mse = initial_train_mse;
    for _ in 0..cfg.epochs {
        let records = bc_records(store, cfg.dims, &train_trajs)?;
        store.zero_grads();
        let mut total = 0.0;
        for rec in &records {
            let mut tape = Tape::new();
            let loss = bc_record_loss(&mut tape, store, rec, true)?;
            tape.backward(loss)?;
            tape.grads_into(store)?;
            total += tape.value(loss).scalar_value()?;
        }
        store.scale_grads(1.0 / records.len() as f64);
        rmsprop_step(store, &mut opt)?;
        final_train_mse = total / records.len() as f64;
    }

    let final_holdout_mse = if cfg.epochs == 0 {
        initial_holdout_mse
    } else {
        bc_mse(store, &bc_records(store, cfg.dims, &holdout_trajs)?)?
    };
    Ok(BcReport {
        initial_train_mse,
        final_train_mse,
        initial_holdout_mse,
        final_holdout_mse,
        epochs_run: cfg.epochs,
    })
}

/// Action-marginal baseline: a diagonal Gaussian fitted to all expert
/// actions by maximum likelihood, ignoring states entirely.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn static_gaussian_fit(dataset: &Dataset) -> Result<StaticGaussian> {
    let mut n = 0usize;
    let mut sum = vec![0.0; ACTION_DIM];
    for traj in &dataset.trajectories {
        for a in &traj.actions {
            for i in 0..ACTION_DIM {
                sum[i] += a[i];
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput { what: "static gaussian action records" });
    }
    let mu: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut var = vec![0.0; ACTION_DIM];
    for traj in &dataset.trajectories {
        for a in &traj.actions {
            for i in 0..ACTION_DIM {
                let d = a[i] - mu[i];
                var[i] += d * d;
            }
        }
    }
    let sigma: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt().max(STD_MIN)).collect();
    Ok(StaticGaussian { mu, sigma })
}

impl StaticGaussian {
    /// A state-independent draw, clamped into the control ranges.
    pub fn sample(&self, rng: &mut RngStream) -> Result<Action> {
        let draw: Vec<f64> =
            (0..ACTION_DIM).map(|i| self.mu[i] + self.sigma[i] * rng.normal()).collect();
        Action::new(draw[0], draw[1], draw[2])
    }
}
