//! Seed derivation: every random draw in a run flows from one top-level seed
//! through named streams, so runs are reproducible and independent stages
//! (data, init, pretrain, adapt, per-subject) never share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used only to fold stream names into seed material.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(seed, name, parts)`.
pub fn derive_seed(seed: u64, name: &str, parts: &[u64]) -> u64 {
    let mut s = splitmix(seed ^ fnv1a(name.as_bytes()));
    for &p in parts {
        s = splitmix(s ^ p);
    }
    s
}

/// Named top-level stream of a run.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, &[]))
}

/// Named stream further indexed by integer parts (epoch, iteration, subject id...).
pub fn substream(seed: u64, name: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, parts))
}
