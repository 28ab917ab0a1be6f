//! Seed plumbing: every random stream in the toolkit is a ChaCha8 generator
//! whose seed is derived from a root seed and a stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed for a named stream.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Stable 64-bit hash of an arbitrary byte string.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let out = Sha256::digest(bytes);
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Short hex digest (16 hex chars) used to tag configs and output files.
pub fn short_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Full SHA-256 hex digest.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_differ_and_replay() {
        let a = derive_seed(7, "flatness");
        let b = derive_seed(7, "evolution");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, "flatness"));
        let mut r1 = rng_from_seed(a);
        let mut r2 = rng_from_seed(a);
        let x: u64 = r1.random();
        let y: u64 = r2.random();
        assert_eq!(x, y);
    }

    #[test]
    fn digest_lengths() {
        assert_eq!(short_digest(b"abc").len(), 16);
        assert_eq!(
            hex_digest(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
