//! Seeded random-number streams with strict role separation.
//!
//! Three independent ChaCha streams feed the simulation: diffusion noise,
//! killing (exponential thresholds, thinning candidates and accept/reject
//! draws) and rebirth (branch choice, path-time draws, initial-law samples).
//! Both lifetime methods consume the diffusion stream identically, one
//! d-tuple of Gaussians per Euler step, so swapping the killing method never
//! perturbs the underlying path. The very first state X₀ ~ μ₀ is drawn from
//! the diffusion stream: the rebirth stream is touched only at actual
//! rebirths, so reseeding it leaves the first lifetime bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed triple, one u64 per stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub diffusion: u64,
    pub killing: u64,
    pub rebirth: u64,
}

impl Seeds {
    pub fn new(diffusion: u64, killing: u64, rebirth: u64) -> Seeds {
        Seeds { diffusion, killing, rebirth }
    }

    /// Seeds for replica `i` of a driver run: each stream seed is offset by
    /// the replica index, keeping replicas deterministic and distinct.
    pub fn replica(&self, i: u64) -> Seeds {
        Seeds {
            diffusion: self.diffusion.wrapping_add(i),
            killing: self.killing.wrapping_add(i),
            rebirth: self.rebirth.wrapping_add(i),
        }
    }
}

/// The three live generator streams.
pub struct RngStreams {
    pub diffusion: ChaCha8Rng,
    pub killing: ChaCha8Rng,
    pub rebirth: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seeds: Seeds) -> RngStreams {
        RngStreams {
            diffusion: ChaCha8Rng::seed_from_u64(seeds.diffusion),
            killing: ChaCha8Rng::seed_from_u64(seeds.killing),
            rebirth: ChaCha8Rng::seed_from_u64(seeds.rebirth),
        }
    }
}
