//! Stable seed derivation shared by every randomized stage.
//!
//! All randomness flows from one master seed through `derive_seed`, so a run
//! is reproducible from its config alone. The mix is a fixed splitmix64
//! chain — platform- and version-independent, unlike hasher-based schemes.

/// splitmix64 finalizer. Stable scrambling for seed derivation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a label, e.g. a stage name.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut acc = splitmix64(base);
    for b in label.as_bytes() {
        acc = splitmix64(acc ^ u64::from(*b));
    }
    acc
}

/// Derive a child seed from a base seed and numeric parts (iteration,
/// position, ...).
pub fn derive_seed_parts(base: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}
