//! Seeded random substreams.
//!
//! Every run owns a [`Substreams`] bundle derived from one seed. Posterior
//! noise is counter-based: a draw is a pure function of the run seed and a
//! [`NoiseKey`], so two optimizers that request the same key see the same
//! `ε` regardless of how many other draws happened in between. Data order and
//! mega-batch selection are ordinary sequential streams, each seeded from its
//! own label so they can be reseeded independently.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const STREAM_DATA: u64 = 0x6461_7461;
const STREAM_MEGA: u64 = 0x6d65_6761;
const STREAM_NOISE: u64 = 0x6e6f_6973;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one 64-bit seed.
pub fn mix_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Which evaluation point a noise draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseRole {
    /// Sample around the inner-loop posterior `q_in`.
    Inner,
    /// Sample around the outer snapshot `q_out` inside an inner step.
    Outer,
    /// Sample used for an outer refresh (full or mega-batch).
    Refresh,
}

impl NoiseRole {
    fn tag(self) -> u64 {
        match self {
            NoiseRole::Inner => 1,
            NoiseRole::Outer => 2,
            NoiseRole::Refresh => 3,
        }
    }
}

/// Address of one standard-normal draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub step: u64,
    pub role: NoiseRole,
    /// Example index, or [`NoiseKey::SHARED`] for a draw shared by a batch.
    pub index: u64,
    pub sample: u32,
}

impl NoiseKey {
    pub const SHARED: u64 = u64::MAX;

    pub fn new(step: u64, role: NoiseRole, index: u64) -> Self {
        Self { step, role, index, sample: 0 }
    }

    pub fn shared(step: u64, role: NoiseRole) -> Self {
        Self::new(step, role, Self::SHARED)
    }

    pub fn with_sample(self, sample: u32) -> Self {
        Self { sample, ..self }
    }
}

/// Counter-based Gaussian noise source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStream {
    seed: u64,
    zeroed: bool,
    antithetic: bool,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed: mix_seed(&[seed, STREAM_NOISE]), zeroed: false, antithetic: false }
    }

    /// A stream whose every draw is exactly zero (the delta method).
    pub fn zeroed() -> Self {
        Self { seed: 0, zeroed: true, antithetic: false }
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn is_zeroed(&self) -> bool {
        self.zeroed
    }

    pub fn is_antithetic(&self) -> bool {
        self.antithetic
    }

    /// Draw `ε ~ N(0, I_d)` at `key`. With antithetic sampling on, odd sample
    /// numbers return the negation of the preceding even draw.
    pub fn normal(&self, key: NoiseKey, dim: usize) -> DVector<f64> {
        if self.zeroed {
            return DVector::zeros(dim);
        }
        let (base, negate) = if self.antithetic {
            (key.sample & !1, key.sample & 1 == 1)
        } else {
            (key.sample, false)
        };
        let seed = mix_seed(&[self.seed, key.step, key.role.tag(), key.index, u64::from(base)]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        if negate {
            -eps
        } else {
            eps
        }
    }
}

/// How example indices are drawn for inner steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Random reshuffling: a fresh permutation per epoch.
    #[default]
    Reshuffle,
    /// Independent uniform draws with replacement.
    Iid,
}

/// Sequential sampler for mini-batch indices.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    rng: ChaCha8Rng,
    mode: SamplingMode,
    n: usize,
    perm: Vec<usize>,
    pos: usize,
}

impl IndexSampler {
    pub fn new(seed: u64, n: usize, mode: SamplingMode) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, STREAM_DATA])),
            mode,
            n,
            perm: Vec::new(),
            pos: 0,
        }
    }

    pub fn next_index(&mut self) -> usize {
        match self.mode {
            SamplingMode::Iid => self.rng.random_range(0..self.n),
            SamplingMode::Reshuffle => {
                if self.pos >= self.perm.len() {
                    self.perm = (0..self.n).collect();
                    self.perm.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let i = self.perm[self.pos];
                self.pos += 1;
                i
            }
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size).map(|_| self.next_index()).collect()
    }
}

/// Draws mega-batches: `m` distinct indices per call.
#[derive(Debug, Clone)]
pub struct MegaBatchSampler {
    rng: ChaCha8Rng,
    n: usize,
}

impl MegaBatchSampler {
    pub fn new(seed: u64, n: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, STREAM_MEGA])), n }
    }

    pub fn draw(&mut self, m: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.rng, self.n, m.min(self.n)).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// The named substreams of one run.
#[derive(Debug, Clone)]
pub struct Substreams {
    pub data: IndexSampler,
    pub mega: MegaBatchSampler,
    pub noise: NoiseStream,
}

impl Substreams {
    pub fn new(seed: u64, n: usize, mode: SamplingMode) -> Self {
        Self {
            data: IndexSampler::new(seed, n, mode),
            mega: MegaBatchSampler::new(seed, n),
            noise: NoiseStream::new(seed),
        }
    }

    pub fn with_noise(mut self, noise: NoiseStream) -> Self {
        self.noise = noise;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_a_pure_function_of_the_key() {
        let s = NoiseStream::new(7);
        let k = NoiseKey::new(3, NoiseRole::Inner, 11);
        assert_eq!(s.normal(k, 5), s.normal(k, 5));
        assert_ne!(s.normal(k, 5), s.normal(NoiseKey::new(4, NoiseRole::Inner, 11), 5));
        assert_ne!(s.normal(k, 5), s.normal(NoiseKey::new(3, NoiseRole::Outer, 11), 5));
    }

    #[test]
    fn zeroed_stream_returns_zeros() {
        let s = NoiseStream::zeroed();
        assert_eq!(s.normal(NoiseKey::shared(0, NoiseRole::Refresh), 4), DVector::zeros(4));
    }

    #[test]
    fn antithetic_pairs_negate() {
        let s = NoiseStream::new(1).with_antithetic(true);
        let k = NoiseKey::new(0, NoiseRole::Inner, 0);
        let a = s.normal(k.with_sample(0), 6);
        let b = s.normal(k.with_sample(1), 6);
        assert_eq!(a, -b);
        assert_ne!(a, s.normal(k.with_sample(2), 6));
    }

    #[test]
    fn reshuffle_visits_every_index_once_per_epoch() {
        let mut s = IndexSampler::new(5, 13, SamplingMode::Reshuffle);
        for _ in 0..3 {
            let mut epoch = s.next_batch(13);
            epoch.sort_unstable();
            assert_eq!(epoch, (0..13).collect::<Vec<_>>());
        }
    }

    #[test]
    fn mega_batches_have_no_repeats() {
        let mut m = MegaBatchSampler::new(2, 50);
        let b = m.draw(20);
        assert_eq!(b.len(), 20);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }
}
