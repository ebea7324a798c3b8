//! Deterministic random streams.
//!
//! Every trajectory draws from a ChaCha20 keystream. The key is derived from
//! the user seed with `SeedableRng::seed_from_u64` (rand_core's PCG32 seed
//! expansion) and the 64-bit ChaCha stream id selects the trajectory:
//!
//! | stream id            | use                                         |
//! |----------------------|---------------------------------------------|
//! | `2k`                 | replication `k`, main lane (pivots, `U_t`)   |
//! | `2k + 1`             | replication `k`, auxiliary lane (skeletal pivots in the decoupled regime) |
//! | `u64::MAX - j`       | data generation (synthetic covariates / outcomes), `j` small |
//!
//! Uniform draws are the 53 high-quality bits of one `u64` mapped to `[0, 1)`
//! (`rand`'s `StandardUniform` for `f64`), so a draw consumes exactly one
//! 64-bit word of keystream.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Source of `Unif[0,1)` draws. The walk only ever asks for uniforms, which
/// lets tests script the exact draw sequence.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

/// Which lane of a replication's randomness to open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Main,
    Auxiliary,
}

/// A named, seekable-by-construction random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha20Rng,
}

impl RngStream {
    /// Stream for replication `replication` of a run seeded with `seed`.
    pub fn for_replication(seed: u64, replication: u64, lane: Lane) -> Self {
        let id = replication
            .checked_mul(2)
            .expect("replication index overflows the stream id space")
            + match lane {
                Lane::Main => 0,
                Lane::Auxiliary => 1,
            };
        Self::with_stream_id(seed, id)
    }

    /// Stream reserved for generating synthetic inputs; `slot` distinguishes
    /// independent generators (covariates, outcomes, ...).
    pub fn for_data(seed: u64, slot: u64) -> Self {
        Self::with_stream_id(seed, u64::MAX - slot)
    }

    pub fn with_stream_id(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Self { inner }
    }

    /// Standard normal draw (used only for synthetic data).
    pub fn next_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform index in `0..len` via the same floor mapping as pivot draws.
    pub fn next_index(&mut self, len: usize) -> usize {
        uniform_to_index(self.next_uniform(), len)
    }
}

impl UniformSource for RngStream {
    fn next_uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

/// Maps a draw `u ∈ [0,1)` to position `⌊u·len⌋` (clamped to `len - 1`).
pub fn uniform_to_index(u: f64, len: usize) -> usize {
    debug_assert!(len > 0);
    let pos = (u * len as f64).floor();
    if pos < 0.0 {
        0
    } else {
        (pos as usize).min(len - 1)
    }
}

/// A scripted sequence of uniforms, for tests and exact replays.
#[derive(Debug, Clone)]
pub struct ScriptedDraws {
    draws: Vec<f64>,
    next: usize,
}

impl ScriptedDraws {
    pub fn new(draws: Vec<f64>) -> Self {
        Self { draws, next: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.next
    }
}

impl UniformSource for ScriptedDraws {
    fn next_uniform(&mut self) -> f64 {
        let u = *self
            .draws
            .get(self.next)
            .expect("scripted draw sequence exhausted");
        self.next += 1;
        u
    }
}
