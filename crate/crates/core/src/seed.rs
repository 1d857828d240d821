//! Seed derivation.
//!
//! Every random stream in the crate is seeded from one top-level seed. A
//! stream is named by a label (usually the subcommand or subsystem) and a
//! list of integer indices (speaker id, sample index, epoch, role...). The
//! derived seed is
//!
//! ```text
//! h = splitmix64(root ^ fnv1a64(label))
//! for i in indices: h = splitmix64(h ^ splitmix64(i))
//! ```
//!
//! which is stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(root ^ fnv1a64(label.as_bytes()));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn rng_for(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, indices))
}
