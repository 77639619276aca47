//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose seed is derived
//! from a tree of 64-bit keys, e.g. `(master seed, replicate, iteration, role)`,
//! and whose stream id is a particle index. Two simulations that use the same
//! key see the same Brownian increments, which is how the fine/coarse law
//! coupling and the common random numbers of the finite differences are
//! realised. Results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uses of randomness inside one stochastic-approximation iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    /// Law tables plugged into the particle filter kernel.
    KernelLaws = 1,
    /// Free particles and resampling inside the kernel.
    Kernel = 2,
    /// Law tables (and their perturbations) used by the gradient.
    GradientLaws = 3,
    /// Initial unconditional path.
    Init = 4,
    /// Observation noise.
    Observation = 5,
    /// Level / iteration-count draw and starting point of one estimator term.
    Randomization = 6,
    /// Data-generating signal.
    Signal = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix64(seed))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child key. Distinct tags give unrelated streams.
    pub fn child(self, tag: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    pub fn role(self, role: Role) -> Self {
        self.child(role as u64)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Stream for particle `index` under this key.
    pub fn particle_rng(self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index as u64);
        rng
    }
}
