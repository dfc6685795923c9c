//! Seed derivation.
//!
//! Every random stream in the crate is derived from one master seed:
//!
//! ```text
//! derive_seed(master, component, index) = splitmix64(master ^ fnv1a64(component) ^ splitmix64(index))
//! ```
//!
//! and seeds a `ChaCha8Rng`. Because each tree, bag, bootstrap replicate or
//! benchmark iteration owns its stream, results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    splitmix64(master ^ fnv1a64(component) ^ splitmix64(index))
}

pub fn rng_for(master: u64, component: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, component, index))
}
