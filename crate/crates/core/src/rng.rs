//! Named, independent random streams derived from one run seed.
//!
//! Each consumer (a probe, the glass-box substitution pass) draws from its own
//! ChaCha stream, selected by hashing the consumer's name, so adding a probe does
//! not perturb what any other probe observes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream_id(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
