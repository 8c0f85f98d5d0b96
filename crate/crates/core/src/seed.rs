//! Deterministic seed fan-out.
//!
//! Every random stream in the pipeline descends from one master seed. A
//! component stream is addressed by a path-like tag, e.g.
//! `train/us/phase2/seed3/init/expert1`, and its seed is
//!
//! ```text
//! child = LE64( SHA-256( master as 8 LE bytes ++ tag bytes )[0..8] )
//! ```
//!
//! The scheme is part of the output contract: run artifacts are
//! byte-reproducible from `(data, config, master seed)`, so the derivation
//! must stay stable across platforms and releases. SHA-256 rather than a
//! process hasher because std's `DefaultHasher` is explicitly unspecified.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive the seed for one named component stream.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[0..8].try_into().expect("sha256 is 32 bytes"))
}

/// ChaCha20 stream for one named component. ChaCha is used everywhere in the
/// crate: it is platform-independent and splittable by construction here.
pub fn component_rng(master: u64, tag: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, tag))
}
