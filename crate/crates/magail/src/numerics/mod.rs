//! Dense f64 tensors, a reverse-mode tape, parameter storage, deterministic
//! RNG streams, RMSprop, a finite-difference gradient oracle, and checkpoint
//! serialization. Everything above this module is built from these pieces.

pub mod checkpoint;
pub mod finite_diff;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use finite_diff::{finite_diff_grad, rel_err, DEFAULT_FD_STEP};
pub use optim::{clip_params, clip_prefixed, rmsprop_step, OptState};
pub use params::ParamStore;
pub use rng::{derive_seed, RngStream};
pub use tape::{forward_backward, Tape, TensorRef};
pub use tensor::Tensor;
