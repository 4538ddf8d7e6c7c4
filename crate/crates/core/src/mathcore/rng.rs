//! Seeded, platform-independent random streams.
//!
//! A stream is a ChaCha20 generator. The 256-bit key comes from four
//! successive SplitMix64 outputs seeded with `master_seed ^ (tag * φ64)`,
//! where `φ64 = 0x9E37_79B9_7F4A_7C15` and `tag` selects a purpose
//! (weights, observations, noise, ...). The 64-bit ChaCha stream id is the
//! caller's `stream_id`, so Monte Carlo trial `t` always reads stream `t`
//! and never overlaps another trial regardless of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::linalg::{Matrix, Vector};
use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 step; returns the output and advances `state`.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(master_seed: u64, tag: u64) -> [u8; 32] {
    let mut state = master_seed ^ tag.wrapping_mul(GOLDEN_GAMMA);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Purpose tags for child streams.
pub mod tags {
    pub const WEIGHTS: u64 = 1;
    pub const OBSERVATIONS: u64 = 2;
    pub const LATENT_NOISE: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const FINETUNE: u64 = 5;
    pub const RISK: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    tag: u64,
    rng: ChaCha20Rng,
}

/// The stream for `(master_seed, stream_id)`.
pub fn derive_stream(master_seed: u64, stream_id: u64) -> RngStream {
    RngStream::tagged(master_seed, 0, stream_id)
}

impl RngStream {
    pub fn tagged(master_seed: u64, tag: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::from_seed(derive_key(master_seed, tag));
        rng.set_stream(stream_id);
        Self { master_seed, stream_id, tag, rng }
    }

    /// Same stream id, different purpose. Does not advance `self`.
    pub fn child(&self, tag: u64) -> Self {
        Self::tagged(self.master_seed, self.tag.wrapping_mul(31).wrapping_add(tag), self.stream_id)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform direction on the unit sphere in `d` dimensions.
    pub fn unit_sphere(&mut self, d: usize) -> Vector {
        loop {
            let v = Vector::new((0..d).map(|_| self.standard_normal()).collect());
            let n = v.norm();
            if n > 1e-300 {
                return v.scale(1.0 / n);
            }
        }
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| std * self.standard_normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("shape")
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// `n` i.i.d. draws from `N(mean, std²)`.
pub fn sample_gaussian(rng: &mut RngStream, n: usize, mean: f64, std: f64) -> Result<Vector> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("gaussian std must be finite and >= 0, got {std}")));
    }
    if !mean.is_finite() {
        return Err(Error::invalid("gaussian mean must be finite"));
    }
    Ok(Vector::new((0..n).map(|_| mean + std * rng.standard_normal()).collect()))
}
