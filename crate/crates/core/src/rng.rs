//! Named, independent random substreams derived from one root seed.
//!
//! Every stream is a ChaCha8 generator keyed by SHA-256 of the root seed and a
//! stream name, so adding or consuming one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn substream(root: u64, name: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update([0u8]);
    h.update(name.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(seed)
}
