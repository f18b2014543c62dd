//! Seeded randomness. Every command owns one root seed; components draw
//! from named sub-streams so that reordering one consumer never shifts
//! another's draws.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// FNV-1a over bytes; stable across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the RNG for sub-stream `name` / `index` under `root`.
pub fn substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a(name.as_bytes()).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Uniform in [0, 1).
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in [0, n). `n` must be nonzero.
pub fn uniform_usize(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    // Multiply-shift; bias is negligible for the small ranges used here.
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = uniform(rng).max(f64::MIN_POSITIVE);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_usize(rng, i + 1);
        items.swap(i, j);
    }
}
