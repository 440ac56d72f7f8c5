//! Run configuration: sizes, rates, and the ablation switch.

use serde::{Deserialize, Serialize};

use crate::agents::MemoryDims;
use crate::error::{Error, Result};

/// Which pieces of the full model a run keeps. Baselines live here too:
/// `plain_gail` drops both memories and the penalty, `bc_only` stops after
/// cloning, `sg_only` fits an action marginal and never trains a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no_RA")]
    NoRa,
    #[serde(rename = "no_local")]
    NoLocal,
    #[serde(rename = "no_global")]
    NoGlobal,
    #[serde(rename = "plain_gail")]
    PlainGail,
    #[serde(rename = "bc_only")]
    BcOnly,
    #[serde(rename = "sg_only")]
    SgOnly,
}

impl Ablation {
    /// The four variants the comparative run trains side by side.
    pub const COMPARED: [Ablation; 4] =
        [Ablation::Full, Ablation::NoRa, Ablation::NoLocal, Ablation::NoGlobal];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRa => "no_RA",
            Ablation::NoLocal => "no_local",
            Ablation::NoGlobal => "no_global",
            Ablation::PlainGail => "plain_gail",
            Ablation::BcOnly => "bc_only",
            Ablation::SgOnly => "sg_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_RA" => Ok(Ablation::NoRa),
            "no_local" => Ok(Ablation::NoLocal),
            "no_global" => Ok(Ablation::NoGlobal),
            "plain_gail" => Ok(Ablation::PlainGail),
            "bc_only" => Ok(Ablation::BcOnly),
            "sg_only" => Ok(Ablation::SgOnly),
            _ => Err(Error::config("ablation", format!("unknown variant `{s}`"))),
        }
    }

    pub fn uses_local(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoRa | Ablation::NoGlobal)
    }

    pub fn uses_global(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoRa | Ablation::NoLocal)
    }

    /// The dispersion penalty needs a live local memory and survives only in
    /// the variants that neither drop it nor zero its input.
    pub fn keeps_penalty(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGlobal)
    }

    pub fn adversarial(self) -> bool {
        !matches!(self, Ablation::BcOnly | Ablation::SgOnly)
    }

    /// Memory wiring recovered from a checkpoint's stored flags.
    pub fn from_flags(uses_local: bool, uses_global: bool) -> Self {
        match (uses_local, uses_global) {
            (true, true) => Ablation::Full,
            (false, true) => Ablation::NoLocal,
            (true, false) => Ablation::NoGlobal,
            (false, false) => Ablation::PlainGail,
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a training run needs besides the track and the demo file.
/// Defaults are desk-scale: small memory width and short episodes so a full
/// run finishes on one core.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Rollouts per iteration, and the expert batch size B.
    pub batch: usize,
    /// Records per episode T; must match the demo trajectories.
    pub horizon: usize,
    /// Memory slot width l (also the embedding width).
    pub slot_width: usize,
    pub discount: f64,
    pub gae_lambda: f64,
    /// Dispersion penalty weight λ₀.
    pub penalty_weight: f64,
    pub critic_steps: usize,
    /// Critic weight clip bound c.
    pub clip: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub value_coef: f64,
    /// Inner epochs per policy update, capped by the KL budget.
    pub policy_epochs: usize,
    pub kl_budget: f64,
    pub ratio_clip: f64,
    pub bc_epochs: usize,
    pub bc_lr: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            batch: 8,
            horizon: 100,
            slot_width: 32,
            discount: 0.99,
            gae_lambda: 0.95,
            penalty_weight: 0.1,
            critic_steps: 5,
            clip: 0.01,
            policy_lr: 3e-4,
            critic_lr: 5e-4,
            value_coef: 0.5,
            policy_epochs: 4,
            kl_budget: 0.01,
            ratio_clip: 0.2,
            bc_epochs: 50,
            bc_lr: 5e-3,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

fn check_positive(field: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(field, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if self.slot_width == 0 {
            return Err(Error::config("slot_width", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("discount", format!("must lie in (0, 1), got {}", self.discount)));
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return Err(Error::config(
                "gae_lambda",
                format!("must lie in [0, 1], got {}", self.gae_lambda),
            ));
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight >= 0.0) {
            return Err(Error::config(
                "penalty_weight",
                format!("must be non-negative, got {}", self.penalty_weight),
            ));
        }
        if self.critic_steps == 0 {
            return Err(Error::config("critic_steps", "must be at least 1"));
        }
        check_positive("clip", self.clip)?;
        check_positive("policy_lr", self.policy_lr)?;
        check_positive("critic_lr", self.critic_lr)?;
        if !(self.value_coef.is_finite() && self.value_coef >= 0.0) {
            return Err(Error::config(
                "value_coef",
                format!("must be non-negative, got {}", self.value_coef),
            ));
        }
        if self.policy_epochs == 0 {
            return Err(Error::config("policy_epochs", "must be at least 1"));
        }
        check_positive("kl_budget", self.kl_budget)?;
        if !(self.ratio_clip > 0.0 && self.ratio_clip < 1.0) {
            return Err(Error::config(
                "ratio_clip",
                format!("must lie in (0, 1), got {}", self.ratio_clip),
            ));
        }
        check_positive("bc_lr", self.bc_lr)?;
        Ok(())
    }

    /// Memory sizing: the local memory holds one episode, the global memory
    /// one batch of episodes.
    pub fn memory_dims(&self) -> MemoryDims {
        MemoryDims {
            l: self.slot_width,
            k_local: self.horizon,
            k_global: self.horizon * self.batch,
        }
    }

    /// The penalty weight this run's ablation actually applies.
    pub fn effective_penalty(&self) -> f64 {
        if self.ablation.keeps_penalty() {
            self.penalty_weight
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_size_the_memories() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let dims = cfg.memory_dims();
        assert_eq!(dims.k_local, cfg.horizon);
        assert_eq!(dims.k_global, cfg.horizon * cfg.batch);
    }

    #[test]
    fn out_of_range_fields_are_named() {
        let mut cfg = TrainConfig::default();
        cfg.discount = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("discount"), "{err}");

        let mut cfg = TrainConfig::default();
        cfg.ratio_clip = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("ratio_clip"));

        let mut cfg = TrainConfig::default();
        cfg.penalty_weight = -0.1;
        assert!(cfg.validate().unwrap_err().to_string().contains("penalty_weight"));
    }

    #[test]
    fn ablation_switches_follow_their_names() {
        assert!(Ablation::Full.uses_local() && Ablation::Full.uses_global());
        assert!(Ablation::Full.keeps_penalty());
        // Dropping the augmentation keeps both memories.
        assert!(Ablation::NoRa.uses_local() && Ablation::NoRa.uses_global());
        assert!(!Ablation::NoRa.keeps_penalty());
        // The penalty reads the local memory, so it dies with it.
        assert!(!Ablation::NoLocal.uses_local() && !Ablation::NoLocal.keeps_penalty());
        assert!(Ablation::NoGlobal.uses_local() && Ablation::NoGlobal.keeps_penalty());
        assert!(!Ablation::PlainGail.uses_local() && !Ablation::PlainGail.uses_global());
        assert!(!Ablation::BcOnly.adversarial() && !Ablation::SgOnly.adversarial());

        let mut cfg = TrainConfig::default();
        cfg.ablation = Ablation::NoRa;
        assert_eq!(cfg.effective_penalty(), 0.0);
        cfg.ablation = Ablation::Full;
        assert_eq!(cfg.effective_penalty(), 0.1);
    }

    #[test]
    fn ablation_names_round_trip() {
        for v in [
            Ablation::Full,
            Ablation::NoRa,
            Ablation::NoLocal,
            Ablation::NoGlobal,
            Ablation::PlainGail,
            Ablation::BcOnly,
            Ablation::SgOnly,
        ] {
            assert_eq!(Ablation::parse(v.name()).unwrap(), v);
        }
        assert!(Ablation::parse("no_ra").is_err());
    }
}
