//! Deterministic random streams.
//!
//! Every stochastic site in the system draws from its own [`RngStream`],
//! derived from the run's base seed plus a tag path (stream kind, then
//! indices such as iteration or episode number). Streams therefore never
//! share state: adding draws at one site cannot shift the values another
//! site sees, which keeps whole runs reproducible down to the bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::tensor::Tensor;

/// Stream tags. One constant per stochastic site.
pub mod tags {
    pub const PARAM_INIT: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const ACTION_NOISE: u64 = 3;
    pub const EXPERT_BATCH: u64 = 4;
    pub const NPC_LAYOUT: u64 = 5;
    pub const GRAD_CHECK: u64 = 6;
    pub const EVAL: u64 = 7;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with an ordered tag path into a stream seed.
pub fn derive_seed(base: u64, tag_path: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tag_path {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// A ChaCha-backed stream addressed by `(base seed, tag path)`.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn from_tags(base: u64, tag_path: &[u64]) -> Self {
        RngStream { rng: ChaCha8Rng::seed_from_u64(derive_seed(base, tag_path)) }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard normal draw via the Box-Muller transform.
    pub fn normal(&mut self) -> f64 {
        // First uniform is mapped into (0, 1] so the log is finite.
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Tensor of independent `N(0, std²)` draws in row-major order.
    pub fn normal_tensor(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| std * self.normal()).collect();
        Tensor::new(shape, data).expect("finite normal draws")
    }
}
