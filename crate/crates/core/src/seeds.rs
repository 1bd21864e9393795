//! Seed derivation. Every random choice in a run descends from one run seed
//! through SHA-256, so results do not depend on scheduling order.

use sha2::{Digest, Sha256};

/// Seed of one generation record.
pub fn item_seed(run_seed: u64, record_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(b"item")
        .chain_update(run_seed.to_le_bytes())
        .chain_update(record_id.as_bytes())
        .finalize();
    fold(&digest)
}

/// Seed of one attempt; `step` is 0-based, `trial` 1-based.
pub fn trial_seed(item_seed: u64, step: usize, trial: u32) -> u64 {
    let digest = Sha256::new()
        .chain_update(b"trial")
        .chain_update(item_seed.to_le_bytes())
        .chain_update((step as u64).to_le_bytes())
        .chain_update(trial.to_le_bytes())
        .finalize();
    fold(&digest)
}

/// Seed for a labelled sub-stream (sheet sampling, fixtures, ...).
pub fn derive(seed: u64, label: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(b"derive")
        .chain_update(seed.to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    fold(&digest)
}

fn fold(digest: &[u8]) -> u64 {
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// SplitMix64 finalizer; cheap mixing for non-cryptographic decisions.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
