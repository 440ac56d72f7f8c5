//! The imitation loop: rollout collection against the learned critic,
//! clipped-ratio policy updates with a KL guard, and the run driver that
//! wires demonstrations, checkpoints, and metrics logging together.

pub mod config;
pub mod rollout;
pub mod run;
pub mod update;

pub use config::{Ablation, TrainConfig};
pub use rollout::{
    advantages, compute_rewards, normalize_advantages, preload_global, rollout, RolloutBuffer,
    RolloutCtx, StepRecord,
};
pub use run::{
    ablate, ablate_variant, combined_table, eval_rollouts, expert_eval_traces, init_params,
    load_any, load_checkpoint, save_checkpoint, sg_rollouts, static_gaussian_fit, train,
    AblationOutcome, AnyModel, LoadedModel, RunFile, TrainOutcome, CTRL_INIT_STD,
    RUN_SCHEMA_VERSION,
};
pub use update::{policy_log_probs, policy_update, PolicyUpdateReport};
