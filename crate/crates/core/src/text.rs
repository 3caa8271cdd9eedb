//! Whitespace tokenization shared by pairing, similarity and the simulator.

use sha2::{Digest, Sha256};

pub fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize(s: &str) -> String {
    tokens(s).join(" ")
}

/// Stable 64-bit hash over a sequence of byte fields: the leading eight
/// bytes of SHA-256 over the length-prefixed fields. Output is fixed across
/// platforms and compiler versions, unlike `DefaultHasher`.
pub(crate) fn stable_hash(fields: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for field in fields {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps a hash onto [0, 1).
pub(crate) fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
