//! Deterministic seed fan-out.
//!
//! Every source of randomness in a run derives from one root seed via
//! `SHA-256("privfed.seed.v1" || root_le || label)`. Component labels are
//! dotted paths like `"node.2.shuffle.round.3"` or `"dealer.session"`, so
//! distinct components draw independent streams while the whole run stays
//! reproducible from a single `--seed`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"privfed.seed.v1";

fn digest(root: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// 64-bit child seed for `label` under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let d = digest(root, label);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// 128-bit child seed, used for PRG roots and session identifiers.
pub fn derive_seed128(root: u64, label: &str) -> [u8; 16] {
    let d = digest(root, label);
    d[..16].try_into().unwrap()
}

/// Deterministic RNG for `label` under `root`.
pub fn rng_from(root: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(digest(root, label))
}
