//! Deterministic random state. Draws come from the ChaCha8 stream cipher
//! keyed by (seed, stream), so a given seed replays the same sequence on
//! every platform, and independent streams (weight init, batch sampling,
//! data synthesis) never overlap. The state tracks how many raw draws have
//! been emitted.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    draws: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> RngState {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&stream.to_le_bytes());
        RngState {
            seed,
            stream,
            draws: 0,
            rng: ChaCha8Rng::from_seed(key),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of raw 64-bit draws emitted so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, bound). `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// Standard normal deviate (Marsaglia polar transform, spare cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let a = self.uniform(-1.0, 1.0);
            let b = self.uniform(-1.0, 1.0);
            let s = a * a + b * b;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(b * m);
                return a * m;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
