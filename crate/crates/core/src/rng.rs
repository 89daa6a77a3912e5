//! Labelled random sub-streams derived from one master seed.
//!
//! Every consumer of randomness asks for `(label, index)`; the pair selects a
//! ChaCha20 stream, so results do not depend on evaluation order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Subsample = 1,
    Projection = 2,
    MechanismNoise = 3,
    Init = 4,
    Shuffle = 5,
    Latent = 6,
    SyntheticNoise = 7,
    SliceSelect = 8,
    Generate = 9,
}

const INDEX_BITS: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSequence(pub u64);

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        SeedSequence(master)
    }

    pub fn master(&self) -> u64 {
        self.0
    }

    pub fn stream(&self, label: Stream, index: u64) -> ChaCha20Rng {
        debug_assert!(index < (1 << INDEX_BITS));
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(((label as u64) << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)));
        rng
    }
}

/// `rows x cols` matrix of i.i.d. `N(0, std^2)` draws, filled row by row.
pub fn normal_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}
