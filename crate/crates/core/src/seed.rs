//! Root-seed splitting into named random streams.
//!
//! Stream names in use:
//!
//! | name               | consumer                                   |
//! |--------------------|--------------------------------------------|
//! | `packing`          | particle placement in the unit cell        |
//! | `halton-train`     | digit scramble of the training samples     |
//! | `halton-test`      | digit scramble of the classifier test set  |
//! | `transport`        | delivery order of the simulated transport  |

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const PACKING: &str = "packing";
pub const HALTON_TRAIN: &str = "halton-train";
pub const HALTON_TEST: &str = "halton-test";
pub const TRANSPORT: &str = "transport";

/// Derives the seed of stream `name` from `root`.
pub fn derive(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    rng(derive(root, name))
}
