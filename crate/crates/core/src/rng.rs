//! Seeded random streams and the small sampling helpers every policy shares.
//!
//! Every run owns an independent ChaCha stream derived from
//! `(master_seed, run_index)`; inside a run, distinct purposes (instance
//! generation, context/noise pre-draws, policy randomness) use distinct
//! stream ids of the same key, so adding a policy never shifts the draws seen
//! by another one.

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng as SimRng;

/// Stream id used to generate the instance (true state, model, perturbation).
pub const STREAM_INSTANCE: u64 = 0;
/// Stream id used to pre-draw contexts and the reward-noise table.
pub const STREAM_EPISODE: u64 = 1;
/// Stream id handed (freshly, identically) to every policy in a run.
pub const STREAM_POLICY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub master: u64,
    pub run: u64,
}

impl RunSeeds {
    pub fn new(master: u64, run: u64) -> Self {
        Self { master, run }
    }

    pub fn stream(&self, purpose: u64) -> SimRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master.to_le_bytes());
        key[8..16].copy_from_slice(&self.run.to_le_bytes());
        key[16..24].copy_from_slice(b"latentbd");
        let mut rng = SimRng::from_seed(key);
        rng.set_stream(purpose);
        rng
    }
}

/// Seeded generator for standalone use (tests, offline pipeline).
pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Index of the maximum, ties broken uniformly with `rng`.
///
/// Consumes randomness only when there is an actual tie. NaN entries are
/// never selected; returns `None` if every entry is NaN or the slice is empty.
pub fn argmax_tie_break<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if ties.is_empty() || v > best {
            best = v;
            ties.clear();
            ties.push(i);
        } else if v == best {
            ties.push(i);
        }
    }
    match ties.len() {
        0 => None,
        1 => Some(ties[0]),
        n => Some(ties[rng.random_range(0..n)]),
    }
}

/// Lowest index attaining the maximum; deterministic.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Draw an index from a normalized probability vector with one uniform draw.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // u landed in the rounding slack above the cumulative sum
    last_positive
}
