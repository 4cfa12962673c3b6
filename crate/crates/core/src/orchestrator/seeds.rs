//! Independent random streams derived from one master seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stream_id(label: &str, index: u64) -> u64 {
    // FNV-1a of the label, mixed with the index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// A generator for stream `(label, index)` of `master`.
pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(label, index));
    rng
}

pub fn derive(master: u64, label: &str, index: u64) -> u64 {
    stream(master, label, index).next_u64()
}
