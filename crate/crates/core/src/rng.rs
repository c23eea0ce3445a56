//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream whose seed
//! is a hash of a master seed and a path of indices (replica, scenario cell,
//! ...). Streams never share state, so serial and parallel runs draw identical
//! values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with an index path into a 64-bit stream seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(GOLDEN)));
    }
    h
}

/// Opens the stream identified by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    let s = derive_seed(master, path);
    let mut seed = [0u8; 32];
    let mut x = s;
    for chunk in seed.chunks_exact_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
