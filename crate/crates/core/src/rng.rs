//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own named stream from the master
//! seed, so adding or reordering one consumer never perturbs another. Stream
//! keys mix the master seed, a purpose label, and two free indices (e.g. env
//! id and episode counter).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A ChaCha12 generator keyed by `[master, fnv1a64(purpose), a, b]` (little-endian).
pub fn stream(master_seed: u64, purpose: &str, a: u64, b: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(purpose.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Standard normal draw via Box-Muller (two uniforms per pair of outputs).
///
/// Uses the polar-free form with explicit guards against log(0).
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let mut u1: f64 = rng.gen();
    if u1 <= f64::MIN_POSITIVE {
        u1 = f64::MIN_POSITIVE;
    }
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fill a slice with i.i.d. standard normals, consuming pairs of uniforms.
pub fn fill_standard_normal(rng: &mut impl RngCore, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}

/// Uniform draw in [0, 1).
pub fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    rng.gen()
}
