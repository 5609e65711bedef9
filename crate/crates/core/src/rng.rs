//! Deterministic keyed RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from a
//! master seed and an integer path such as `[TAG_VOTE, step, prompt, cand,
//! item, vote]`. Streams depend only on their key, never on evaluation
//! order, so runs reproduce bit-identically under any fan-out schedule.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_SPEC: u64 = 1;
pub const TAG_GEN: u64 = 2;
pub const TAG_VOTE: u64 = 3;
pub const TAG_LENIENT: u64 = 4;
pub const TAG_GOLD: u64 = 5;
pub const TAG_COTRAIN_PICK: u64 = 6;
pub const TAG_COTRAIN_TRACE: u64 = 7;
pub const TAG_HOLISTIC: u64 = 8;
pub const TAG_INIT: u64 = 9;
pub const TAG_GRID: u64 = 10;
pub const TAG_MC: u64 = 11;
pub const TAG_CORRUPT: u64 = 12;
pub const TAG_EVAL: u64 = 13;

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Single derived value, for seeding nested samplers that key their own
/// streams.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed ^ 0x9216_d5d9_8979_fb1b;
    let _ = splitmix(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(23);
        let _ = splitmix(&mut state);
    }
    splitmix(&mut state)
}

/// Stream keyed by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    let _ = splitmix(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xff51_afd7_ed55_8ccd).rotate_left(17);
        let _ = splitmix(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
