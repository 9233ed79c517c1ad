//! Seed derivation. Every random stream in the crate comes from a master seed
//! and a component name, so runs are reproducible and no ambient entropy is used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Child seed for `component` (and an index, e.g. a trial number) under `master`.
pub fn derive(master: u64, component: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(component.len() + 16);
    bytes.extend_from_slice(&master.to_le_bytes());
    bytes.extend_from_slice(component.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    splitmix(fnv1a(&bytes))
}

/// A ChaCha8 stream whose stream id is the hashed component name.
pub fn stream(master: u64, component: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fnv1a(component.as_bytes()));
    rng
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
