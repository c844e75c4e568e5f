//! Counter-based seed splitting.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose
//! key is derived from a user-supplied root seed:
//!
//! ```text
//! mix(x)                = splitmix64 finalizer of x
//! derive(root, tag, i)  = mix(mix(root ^ mix(tag)) + i)        (wrapping add)
//! rng(seed)             = ChaCha8Rng::seed_from_u64(seed)
//! generation stream g   = rng(path_seed) with set_stream(g), word_pos 0
//! ```
//!
//! Tags are the `TAG_*` constants below. Replication `r` of a batch uses
//! `derive(root, TAG_REPLICATION, r)` as its own root, so batch output is a
//! function of the root seed alone and never of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_ENV: u64 = 0x01;
pub const TAG_PATH: u64 = 0x02;
pub const TAG_REPLICATION: u64 = 0x03;
pub const TAG_LINE: u64 = 0x04;
pub const TAG_PILOT: u64 = 0x05;
pub const TAG_SHIFT: u64 = 0x06;
pub const TAG_SEED_SET: u64 = 0x07;

#[inline]
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[inline]
pub fn derive(root: u64, tag: u64, index: u64) -> u64 {
    mix(mix(root ^ mix(tag)).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `generation` of the key derived from `seed`.
pub fn generation_rng(base: &ChaCha8Rng, generation: u64) -> ChaCha8Rng {
    let mut r = base.clone();
    r.set_stream(generation);
    r.set_word_pos(0);
    r
}

/// Environment and path seeds of one annealed replication.
pub fn split_env_path(seed: u64) -> (u64, u64) {
    (derive(seed, TAG_ENV, 0), derive(seed, TAG_PATH, 0))
}
