//! Counter-keyed random streams.
//!
//! Every stochastic draw in a run is addressed by `(seed, step, slot, candidate, purpose)`.
//! The key becomes the ChaCha seed and the purpose selects the ChaCha stream, so a draw never
//! depends on how many other draws happened before it or on which thread made it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Purpose {
    CandidateNoise = 1,
    FftNoise = 2,
    ResampleNoise = 3,
    Renoise = 4,
    WarmUp = 5,
    Subject = 6,
    Corpus = 7,
    PixelNoise = 8,
    Test = 99,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub step: u64,
    pub slot: u64,
    pub candidate: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self { seed, step: 0, slot: 0, candidate: 0, purpose }
    }

    pub fn at(self, step: u64, slot: u64, candidate: u64) -> Self {
        Self { step, slot, candidate, ..self }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.step.to_le_bytes());
        key[16..24].copy_from_slice(&self.slot.to_le_bytes());
        key[24..32].copy_from_slice(&self.candidate.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.purpose as u64);
        rng
    }

    /// `len` i.i.d. standard normal values from this stream.
    pub fn normals<T: Scalar>(&self, len: usize) -> Vec<T> {
        let mut rng = self.rng();
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z)
            })
            .collect()
    }
}
