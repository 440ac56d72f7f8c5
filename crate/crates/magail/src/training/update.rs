//! Clipped-ratio policy improvement over collected rollouts.
//!
//! Each epoch replays every buffer through one differentiable tape per
//! trajectory, unrolling the local memory from empty and threading the read
//! controller through the frozen global memory, exactly as the rollout did.
//! The objective is the pessimistic clipped surrogate plus a value
//! regression term whose gradient is cut off from the trunk, so advantages
//! alone decide whether the policy body moves. A KL estimate against the
//! rollout policy stops the epoch loop, reverting the last step when it
//! overshoots twice the budget.

use crate::agents::{
    augment, augment_on_tape, bind_embed, bind_policy, embed, embed_on_tape, log_prob_on_tape,
    log_prob_value, policy_forward, MemoryDims, GLOBAL_PREFIX, LOCAL_PREFIX, STD_MIN,
};
use crate::error::{Error, Result};
use crate::memory::{self, bind_controller, read_on_tape, state_constants, step_on_tape, CtrlRefs,
    MemoryConfig, MemoryState, StateRefs};
use crate::numerics::{rmsprop_step, OptState, ParamStore, Tape, Tensor, TensorRef};
use crate::training::config::{Ablation, TrainConfig};
use crate::training::rollout::RolloutBuffer;

#[derive(Clone, Copy, Debug)]
pub struct PolicyUpdateReport {
    /// Optimizer steps that remained applied.
    pub epochs_run: usize,
    /// KL estimate between the rollout policy and the returned parameters.
    pub final_kl: f64,
    /// The last step overshot twice the budget and was undone.
    pub reverted_last: bool,
    /// Mean clipped surrogate at the first epoch, before any step.
    pub mean_surrogate: f64,
}

struct MemoryRefs {
    local_read: Option<CtrlRefs>,
    local_write: Option<CtrlRefs>,
    global_read: Option<CtrlRefs>,
}

fn bind_memories(
    tape: &mut Tape,
    store: &ParamStore,
    ablation: Ablation,
) -> Result<MemoryRefs> {
    let bind = |tape: &mut Tape, name: &str| bind_controller(tape, store, name, true);
    Ok(MemoryRefs {
        local_read: if ablation.uses_local() {
            Some(bind(tape, &format!("{LOCAL_PREFIX}/read"))?)
        } else {
            None
        },
        local_write: if ablation.uses_local() {
            Some(bind(tape, &format!("{LOCAL_PREFIX}/write"))?)
        } else {
            None
        },
        global_read: if ablation.uses_global() {
            Some(bind(tape, &format!("{GLOBAL_PREFIX}/read"))?)
        } else {
            None
        },
    })
}

/// Unrolls one buffer on a fresh tape and returns the summed loss node, the
/// per-step log densities, and the summed surrogate value.
fn buffer_loss(
    tape: &mut Tape,
    store: &ParamStore,
    buf: &RolloutBuffer,
    buf_index: usize,
    ablation: Ablation,
    dims: MemoryDims,
    global: &MemoryState,
    value_coef: f64,
    ratio_clip: f64,
) -> Result<(TensorRef, Vec<f64>, f64)> {
    let e_refs = bind_embed(tape, store, true)?;
    let p_refs = bind_policy(tape, store, true)?;
    let mem = bind_memories(tape, store, ablation)?;
    let zero = tape.constant(Tensor::zeros(vec![dims.l]));
    let mut local = state_constants(
        tape,
        &MemoryState::fresh(MemoryConfig::new(dims.k_local, dims.l)?),
    );
    let mut global_st = state_constants(tape, global);

    let mut logps = Vec::with_capacity(buf.len());
    let mut surr_value = 0.0;
    let mut surr_sum: Option<TensorRef> = None;
    let mut vsq_sum: Option<TensorRef> = None;

    for (t, rec) in buf.steps.iter().enumerate() {
        let s_e = embed_on_tape(tape, e_refs, &rec.features)?;
        let m_l = match (mem.local_read, mem.local_write) {
            (Some(r), Some(w)) => {
                let (ro, next) = step_on_tape(tape, r, w, local, s_e)?;
                local = next;
                ro.m
            }
            _ => zero,
        };
        let m_g = match mem.global_read {
            Some(r) => {
                let (ro, c_r_new) = read_on_tape(tape, r, global_st, s_e)?;
                global_st = StateRefs { h_r: ro.q, c_r: c_r_new, ..global_st };
                ro.m
            }
            None => zero,
        };
        let aug = augment_on_tape(tape, s_e, m_l, m_g)?;

        let pre = tape.matvec(p_refs.trunk_w, aug)?;
        let pre = tape.add(pre, p_refs.trunk_b)?;
        let h = tape.tanh(pre)?;
        let mean = tape.matvec(p_refs.mean_w, h)?;
        let mean = tape.add(mean, p_refs.mean_b)?;
        let log_std = tape.clamp(p_refs.log_std, STD_MIN.ln(), 0.0)?;
        let logp = log_prob_on_tape(tape, mean, log_std, &rec.u)?;
        logps.push(tape.value(logp).data()[0]);

        // Value head on a detached copy of the hidden layer: the regression
        // term moves only value_w and value_b, never the trunk.
        let h_const = tape.constant(tape.value(h).clone());
        let v = tape.matvec(p_refs.value_w, h_const)?;
        let v = tape.add(v, p_refs.value_b)?;

        let shift = tape.add_scalar(logp, -rec.log_prob)?;
        if !tape.value(shift).data()[0].exp().is_finite() {
            return Err(Error::NonFinite {
                context: format!("importance ratio in buffer {buf_index} step {t}"),
            });
        }
        let ratio = tape.exp(shift)?;
        let unclipped = tape.scale(ratio, rec.advantage)?;
        let capped = tape.clamp(ratio, 1.0 - ratio_clip, 1.0 + ratio_clip)?;
        let clipped = tape.scale(capped, rec.advantage)?;
        let surr = tape.min(unclipped, clipped)?;
        surr_value += tape.value(surr).data()[0];
        surr_sum = Some(match surr_sum {
            Some(prev) => tape.add(prev, surr)?,
            None => surr,
        });

        let vdiff = tape.add_scalar(v, -rec.ret)?;
        let vsq = tape.mul(vdiff, vdiff)?;
        vsq_sum = Some(match vsq_sum {
            Some(prev) => tape.add(prev, vsq)?,
            None => vsq,
        });
    }

    let surr_sum = surr_sum.ok_or(Error::EmptyInput { what: "policy update buffer" })?;
    let vsq_sum = vsq_sum.expect("vsq accumulated alongside surrogate");
    let neg_surr = tape.scale(surr_sum, -1.0)?;
    let weighted_vsq = tape.scale(vsq_sum, value_coef)?;
    let loss = tape.add(neg_surr, weighted_vsq)?;
    Ok((loss, logps, surr_value))
}

/// Log density of each recorded draw under the current parameters, replaying
/// the buffer's features through embedding and memories exactly as the
/// rollout did. At unchanged parameters this reproduces the stored
/// `log_prob` values bit for bit.
pub fn policy_log_probs(
    store: &ParamStore,
    buf: &RolloutBuffer,
    ablation: Ablation,
    dims: MemoryDims,
    global: &MemoryState,
) -> Result<Vec<f64>> {
    let zero = Tensor::zeros(vec![dims.l]);
    let mut local = MemoryState::fresh(MemoryConfig::new(dims.k_local, dims.l)?);
    let mut global_scratch = global.clone();
    let mut out = Vec::with_capacity(buf.len());
    for rec in &buf.steps {
        let s_e = embed(store, &rec.features)?;
        let m_l = if ablation.uses_local() {
            let (ro, next) = memory::step(store, LOCAL_PREFIX, &local, &s_e)?;
            local = next;
            ro.m
        } else {
            zero.clone()
        };
        let m_g = if ablation.uses_global() {
            let (ro, next) = memory::read(store, GLOBAL_PREFIX, &global_scratch, &s_e)?;
            global_scratch = next;
            ro.m
        } else {
            zero.clone()
        };
        let s_aug = augment(&s_e, &m_l, &m_g)?;
        let (mean, std, _) = policy_forward(store, &s_aug)?;
        out.push(log_prob_value(mean.data(), std.data(), &rec.u)?);
    }
    Ok(out)
}

fn mean_kl(
    store: &ParamStore,
    buffers: &[RolloutBuffer],
    ablation: Ablation,
    dims: MemoryDims,
    global: &MemoryState,
    total_steps: usize,
) -> Result<f64> {
    let mut sum = 0.0;
    for buf in buffers {
        let new_lps = policy_log_probs(store, buf, ablation, dims, global)?;
        for (rec, lp) in buf.steps.iter().zip(new_lps) {
            sum += rec.log_prob - lp;
        }
    }
    Ok(sum / total_steps as f64)
}

/// Runs up to `policy_epochs` RMSprop steps on the clipped surrogate. After
/// each step the KL estimate against the rollout policy is measured at the
/// new parameters: past the budget the loop stops, and past twice the budget
/// the step is undone first, so the returned parameters always sit within
/// twice the budget of the policy that collected the data.
pub fn policy_update(
    store: &mut ParamStore,
    buffers: &[RolloutBuffer],
    global: &MemoryState,
    cfg: &TrainConfig,
) -> Result<PolicyUpdateReport> {
    let total_steps: usize = buffers.iter().map(|b| b.len()).sum();
    if total_steps == 0 {
        return Err(Error::EmptyInput { what: "policy update batch" });
    }
    let ablation = cfg.ablation;
    let dims = cfg.memory_dims();
    let mut opt = OptState::rmsprop(cfg.policy_lr);
    let mut report = PolicyUpdateReport {
        epochs_run: 0,
        final_kl: 0.0,
        reverted_last: false,
        mean_surrogate: 0.0,
    };
    let mut prev_kl = 0.0;

    for epoch in 0..cfg.policy_epochs {
        let snapshot = store.clone();
        store.zero_grads();
        let mut surr_total = 0.0;
        for (i, buf) in buffers.iter().enumerate() {
            let mut tape = Tape::new();
            let (loss, _, surr) = buffer_loss(
                &mut tape,
                store,
                buf,
                i,
                ablation,
                dims,
                global,
                cfg.value_coef,
                cfg.ratio_clip,
            )?;
            tape.backward(loss)?;
            tape.grads_into(store)?;
            surr_total += surr;
        }
        if epoch == 0 {
            report.mean_surrogate = surr_total / total_steps as f64;
        }
        store.scale_grads(1.0 / total_steps as f64);
        rmsprop_step(store, &mut opt)?;

        let kl = mean_kl(store, buffers, ablation, dims, global, total_steps)?;
        if kl > 2.0 * cfg.kl_budget {
            store.restore_values(&snapshot)?;
            report.reverted_last = true;
            report.final_kl = prev_kl;
            return Ok(report);
        }
        report.epochs_run += 1;
        report.final_kl = kl;
        if kl > cfg.kl_budget {
            return Ok(report);
        }
        prev_kl = kl;
    }
    Ok(report)
}
