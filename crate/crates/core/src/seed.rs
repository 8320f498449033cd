//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of integers (a master
//! seed, a purpose tag, an entity id, ...). Streams never depend on the order
//! in which other streams were consumed, so results are stable under
//! reordering, parallelism and partial reruns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used everywhere randomness is needed.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const USER_INIT: u64 = 0x5553_4552;
    pub const ITEM_INIT: u64 = 0x4954_454d;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const SPEC: u64 = 0x5350_4543;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const TRAIN: u64 = 0x5452_4149;
    pub const SYNTH: u64 = 0x5359_4e54;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a sequence of keys into a single 64-bit seed.
pub fn derive(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x6a09_e667_f3bc_c909, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(keys))
}
