//! Keyed deterministic random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha stream whose seed is
//! derived from a tuple of integers (experiment seed, sample index, epoch,
//! view, stage, ...). Identical keys always produce identical streams, and
//! the order in which independent streams are consumed never matters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key tuple into a single 64-bit seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Hashes a string label (e.g. a parameter name) into a key component.
pub fn label_key(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

/// Address of one augmentation stage's parameter draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomKey {
    pub seed: u64,
    pub sample_index: u64,
    pub epoch: u64,
    pub view: u64,
    pub stage: u64,
}

/// Random stream bound to a [`RandomKey`].
#[derive(Debug, Clone)]
pub struct RandomSource {
    key: RandomKey,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(key: RandomKey) -> Self {
        let rng = keyed_rng(&[key.seed, key.sample_index, key.epoch, key.view, key.stage]);
        Self { key, rng }
    }

    /// Convenience source keyed by a bare seed (all other components zero).
    pub fn from_seed(seed: u64) -> Self {
        Self::new(RandomKey {
            seed,
            sample_index: 0,
            epoch: 0,
            view: 0,
            stage: 0,
        })
    }

    pub fn key(&self) -> RandomKey {
        self.key
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
