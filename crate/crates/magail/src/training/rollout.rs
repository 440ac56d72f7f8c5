//! Memory-coupled rollouts and the per-step reward and advantage math.

use crate::adversary::{critic_score_batch, CriticBatch};
use crate::agents::{
    self, augment, embed, mean_action, policy_forward, sample_action, MemoryDims, GLOBAL_PREFIX,
    LOCAL_PREFIX,
};
use crate::error::{Error, Result};
use crate::laneworld::{features, reset, step, Action, Events, SimTrace, TrackSpec, DT};
use crate::memory::{self, MemoryConfig, MemoryState};
use crate::numerics::{ParamStore, RngStream, Tensor};
use crate::training::config::Ablation;

/// One executed step with everything later phases need: the critic reads
/// `s_aug`/`action`, the reward combines `score` and `dispersion`, and the
/// policy update replays `features`/`u` against `log_prob`.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub features: Vec<f64>,
    pub s_embed: Tensor,
    pub m_local: Tensor,
    pub m_global: Tensor,
    pub s_aug: Tensor,
    pub action: Action,
    /// Pre-squash Gaussian draw the density was evaluated at.
    pub u: Vec<f64>,
    pub log_prob: f64,
    pub score: f64,
    pub dispersion: f64,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    pub trace: SimTrace,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_score(&self) -> f64 {
        self.steps.iter().map(|s| s.score).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_dispersion(&self) -> f64 {
        self.steps.iter().map(|s| s.dispersion).sum::<f64>() / self.steps.len() as f64
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Feeds a batch of expert state rows through the global memory in order,
/// one write per record, and returns the loaded state plus the write count.
/// The batch must fill the memory exactly: one slot was provisioned per
/// record. An empty batch leaves the memory untouched.
pub fn preload_global(
    store: &ParamStore,
    global: &MemoryState,
    trajectories: &[&[Vec<f64>]],
) -> Result<(MemoryState, usize)> {
    if trajectories.is_empty() {
        return Ok((global.clone(), 0));
    }
    let total: usize = trajectories.iter().map(|t| t.len()).sum();
    if total != global.config.k {
        return Err(Error::SlotMismatch { expected: global.config.k, got: total });
    }
    let mut state = global.clone();
    let mut writes = 0;
    for states in trajectories {
        for f in *states {
            let s_e = embed(store, f)?;
            let (_, next) = memory::step(store, GLOBAL_PREFIX, &state, &s_e)?;
            state = next;
            writes += 1;
        }
    }
    Ok((state, writes))
}

/// Everything a rollout reads but never writes.
pub struct RolloutCtx<'a> {
    pub store: &'a ParamStore,
    pub spec: &'a TrackSpec,
    pub ablation: Ablation,
    pub dims: MemoryDims,
    /// Preloaded global memory; rollouts read it through a scratch copy of
    /// the read controller and never write back.
    pub global: &'a MemoryState,
    /// Act with the squashed mean instead of sampling.
    pub greedy: bool,
}

/// One episode: the local memory starts empty, the global memory matrix is
/// frozen, and every step embeds, reads both memories, acts, and records the
/// dispersion against the previous local read (zero at the first step). The
/// buffer holds exactly `t_steps` records; the last action is chosen but not
/// executed, mirroring the demo recorder.
pub fn rollout(ctx: &RolloutCtx, t_steps: usize, env_seed: u64, noise_seed: u64) -> Result<RolloutBuffer> {
    if t_steps == 0 {
        return Err(Error::EmptyInput { what: "rollout length" });
    }
    let mut state = reset(ctx.spec, env_seed)?;
    let mut noise = RngStream::from_tags(noise_seed, &[]);
    let zero_read = Tensor::zeros(vec![ctx.dims.l]);
    let mut local = MemoryState::fresh(MemoryConfig::new(ctx.dims.k_local, ctx.dims.l)?);
    let mut global_scratch = ctx.global.clone();
    let mut trace = SimTrace::new(DT);
    let mut steps = Vec::with_capacity(t_steps);
    let mut pending = Events::none();
    let mut prev_local_read: Option<Tensor> = None;

    for t in 0..t_steps {
        let f = features(ctx.spec, &state);
        let s_e = embed(ctx.store, &f)?;
        let m_l = if ctx.ablation.uses_local() {
            let (ro, next) = memory::step(ctx.store, LOCAL_PREFIX, &local, &s_e)?;
            local = next;
            ro.m
        } else {
            zero_read.clone()
        };
        let m_g = if ctx.ablation.uses_global() {
            let (ro, next) = memory::read(ctx.store, GLOBAL_PREFIX, &global_scratch, &s_e)?;
            global_scratch = next;
            ro.m
        } else {
            zero_read.clone()
        };
        let s_aug = augment(&s_e, &m_l, &m_g)?;
        let (mean, std, value) = policy_forward(ctx.store, &s_aug)?;
        let sample = if ctx.greedy {
            let u = mean.data().to_vec();
            agents::ActionSample {
                action: mean_action(&mean)?,
                log_prob: agents::log_prob_value(mean.data(), std.data(), &u)?,
                u,
            }
        } else {
            sample_action(&mean, &std, &mut noise)?
        };
        let dispersion = match &prev_local_read {
            Some(prev) if ctx.ablation.uses_local() => memory::dispersion(prev.data(), m_l.data()),
            _ => 0.0,
        };

        trace.push(ctx.spec, &state, pending);
        let action = sample.action;
        steps.push(StepRecord {
            features: f,
            s_embed: s_e,
            m_local: m_l.clone(),
            m_global: m_g,
            s_aug,
            action,
            u: sample.u,
            log_prob: sample.log_prob,
            score: 0.0,
            dispersion,
            reward: 0.0,
            value,
            advantage: 0.0,
            ret: 0.0,
        });
        prev_local_read = Some(m_l);

        if t + 1 < t_steps {
            let (next, events) = step(ctx.spec, &state, &action)?;
            state = next;
            pending = events;
        }
    }
    Ok(RolloutBuffer { steps, trace })
}

/// Scores every step with the current critic and combines score and penalty
/// into the reward: `r_t = score_t − λ₀·dispersion_t`.
pub fn compute_rewards(store: &ParamStore, buffers: &mut [RolloutBuffer], lambda0: f64) -> Result<()> {
    for buf in buffers.iter_mut() {
        let states: Vec<Tensor> = buf.steps.iter().map(|s| s.s_aug.clone()).collect();
        let actions: Vec<Vec<f64>> = buf.steps.iter().map(|s| s.action.to_vec()).collect();
        let batch = CriticBatch::new(states, actions)?;
        let scores = critic_score_batch(store, &batch)?;
        for (rec, score) in buf.steps.iter_mut().zip(scores) {
            rec.score = score;
            rec.reward = score - lambda0 * rec.dispersion;
        }
    }
    Ok(())
}

/// Generalized advantage estimation with a zero bootstrap past the horizon;
/// returns are advantages plus values. Advantages here are raw: the batch
/// normalization is a separate pass.
pub fn advantages(buffer: &mut RolloutBuffer, discount: f64, gae_lambda: f64) {
    let mut next_value = 0.0;
    let mut next_adv = 0.0;
    for rec in buffer.steps.iter_mut().rev() {
        let delta = rec.reward + discount * next_value - rec.value;
        let adv = delta + discount * gae_lambda * next_adv;
        rec.advantage = adv;
        rec.ret = adv + rec.value;
        next_value = rec.value;
        next_adv = adv;
    }
}

/// Shifts and scales advantages to zero mean and unit variance across the
/// whole batch. A nearly constant batch is left alone rather than blown up.
pub fn normalize_advantages(buffers: &mut [RolloutBuffer]) {
    let n: usize = buffers.iter().map(|b| b.steps.len()).sum();
    if n == 0 {
        return;
    }
    let sum: f64 = buffers.iter().flat_map(|b| &b.steps).map(|s| s.advantage).sum();
    let mean = sum / n as f64;
    let var: f64 = buffers
        .iter()
        .flat_map(|b| &b.steps)
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    if var < 1e-12 {
        return;
    }
    let inv = 1.0 / var.sqrt();
    for buf in buffers.iter_mut() {
        for rec in buf.steps.iter_mut() {
            rec.advantage = (rec.advantage - mean) * inv;
        }
    }
}
