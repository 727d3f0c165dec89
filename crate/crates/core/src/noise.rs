//! Counter-keyed Gaussian noise.
//!
//! Every standard normal block is a pure function of `(seed, stream_id, step)`:
//! the triple is hashed into the key of a SplitMix64 sequence and the block is
//! drawn from that sequence with the ziggurat sampler. No generator state is
//! carried between steps, so a block can be regenerated out of order and the
//! result does not depend on how work is split across threads.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Step index reserved for initial-condition draws.
pub const INIT_STEP: u64 = u64::MAX;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 sequence whose starting point is derived from a counter triple.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream_id: u64, step: u64) -> Self {
        let a = mix64(seed ^ GOLDEN);
        let b = mix64(a.wrapping_add(stream_id.wrapping_mul(0xd1b5_4a32_d192_ed03)));
        let key = mix64(b ^ step.wrapping_mul(GOLDEN).rotate_left(17));
        Self { key, counter: 0 }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand::rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

/// One independent noise source `ξ^i` of a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fills `out` with the iid standard normal block for `step`.
    #[inline]
    pub fn block(&self, step: u64, out: &mut [f64]) {
        let mut rng = CounterRng::new(self.seed, self.stream_id, step);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
}

/// Source of the Gaussian increments consumed by the particle updates.
///
/// Source `0` drives `θ`; source `i ≥ 1` drives particle `i - 1`.
pub trait NoiseSource: Sync {
    fn fill(&self, source: usize, step: u64, out: &mut [f64]);
}

impl<T: NoiseSource + ?Sized> NoiseSource for &T {
    fn fill(&self, source: usize, step: u64, out: &mut [f64]) {
        (**self).fill(source, step, out)
    }
}

/// The streams of one replicate: stream id `replicate << 32 | source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterNoise {
    pub seed: u64,
    pub replicate: u32,
}

impl CounterNoise {
    pub fn new(seed: u64, replicate: u32) -> Self {
        Self { seed, replicate }
    }

    pub fn stream(&self, source: usize) -> NoiseStream {
        debug_assert!(source <= u32::MAX as usize);
        NoiseStream::new(self.seed, (u64::from(self.replicate) << 32) | source as u64)
    }

    /// Draws used for the initial condition of `source`.
    pub fn init_block(&self, source: usize, out: &mut [f64]) {
        self.stream(source).block(INIT_STEP, out)
    }
}

impl NoiseSource for CounterNoise {
    #[inline]
    fn fill(&self, source: usize, step: u64, out: &mut [f64]) {
        self.stream(source).block(step, out)
    }
}

/// Deterministic runs: every block is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&self, _source: usize, _step: u64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Coarse-step increments built from `ratio` consecutive fine-step blocks.
///
/// Coarse block `n` is `(ξ_{n·r} + … + ξ_{n·r+r-1}) / √r`, i.e. the Brownian
/// increment over one coarse step expressed in unit-variance form. A chain run
/// at step `r·γ` on this source shares its Brownian path with a chain run at
/// `γ` on the fine source.
#[derive(Debug, Clone, Copy)]
pub struct AggregatedNoise<S> {
    fine: S,
    ratio: u64,
}

impl<S: NoiseSource> AggregatedNoise<S> {
    pub fn new(fine: S, ratio: u64) -> Self {
        assert!(ratio >= 1, "aggregation ratio must be positive");
        Self { fine, ratio }
    }
}

impl<S: NoiseSource> NoiseSource for AggregatedNoise<S> {
    fn fill(&self, source: usize, step: u64, out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for k in 0..self.ratio {
            self.fine.fill(source, step * self.ratio + k, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
        let scale = (self.ratio as f64).sqrt().recip();
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
}
