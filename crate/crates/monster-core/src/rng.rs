//! Deterministic random number derivation.
//!
//! All randomness in the crate flows from a single global `u64` seed.
//! Component streams are derived as `seed ^ fnv1a64(tag)` fed through
//! SplitMix64, so adding a component never perturbs the streams of the
//! others. Per-pixel noise uses a stateless hash of (seed, pixel index),
//! making results independent of pixel visit order and thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a hash of a component tag.
pub fn fnv1a64(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for a named component stream.
pub fn component_seed(global_seed: u64, tag: &str) -> u64 {
    splitmix64(global_seed ^ fnv1a64(tag))
}

/// Seeded RNG for a named component (e.g. "scene/3", "calib/restart/1").
pub fn component_rng(global_seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(component_seed(global_seed, tag))
}

/// Uniform f64 in [0, 1) from a u64.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stateless per-pixel uniform in [0, 1): hash of (stream seed, pixel index,
/// draw index).
#[inline]
pub fn pixel_uniform(stream_seed: u64, pixel: u64, draw: u64) -> f64 {
    unit_f64(splitmix64(
        stream_seed ^ pixel.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ draw.wrapping_mul(0xda94_2042_e4dd_58b5),
    ))
}

/// Stateless per-pixel standard normal via Box-Muller.
#[inline]
pub fn pixel_normal(stream_seed: u64, pixel: u64) -> f64 {
    let u1 = pixel_uniform(stream_seed, pixel, 0).max(f64::MIN_POSITIVE);
    let u2 = pixel_uniform(stream_seed, pixel, 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
