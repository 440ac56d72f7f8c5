//! Memory-augmented adversarial imitation learning at desk scale.
//!
//! The crate trains a stochastic driving policy to imitate scripted expert
//! personas on a deterministic 2-D multi-lane simulator. The policy reads and
//! writes two LSTM-controlled neural memories: a per-episode local memory and
//! a batch-level global memory preloaded from expert demonstrations. A
//! Wasserstein critic scores (augmented state, action) pairs; the per-step
//! reward is the critic score minus a cosine-dispersion penalty that
//! discourages abrupt jumps in consecutive local-memory outputs.
//!
//! Subsystems, bottom-up:
//!
//! - [`numerics`]: dense f64 tensors, an eager reverse-mode tape over a fixed
//!   op set, parameter storage, RMSprop, weight clipping, a finite-difference
//!   gradient oracle, splittable counter-based RNG streams, and the checkpoint
//!   file format.
//! - [`memory`]: the neural memory module (LSTM read/write controllers, soft
//!   attention over a slot stack, convex slot update) and the dispersion
//!   measure.
//! - [`laneworld`]: the simulator (kinematics, features, events), scripted
//!   expert personas, and the line-delimited JSON demo dataset format.
//! - [`agents`]: feature embedding, state augmentation, the Gaussian policy
//!   with squashed actions, behavioural-cloning pretraining, and the static
//!   Gaussian baseline.
//! - [`adversary`]: the Wasserstein critic and its clipped RMSprop update.
//! - [`training`]: the imitation loop (global preload, rollouts, critic steps,
//!   rewards, GAE, clipped-ratio policy updates with a KL stopping rule) and
//!   the ablation runner.
//! - [`evaluation`]: derived kinematic series, histograms, KL divergences, and
//!   emergent behaviour metrics.
//! - [`cli`]: the `magail` executable (demo / train / eval / ablate /
//!   inspect-memory).

pub mod adversary;
pub mod agents;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod laneworld;
pub mod memory;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
