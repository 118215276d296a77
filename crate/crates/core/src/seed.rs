//! Deterministic seed derivation.
//!
//! All randomness in this crate flows from explicit `u64` seeds. Sub-streams
//! (model init, shuffling, dropout, per-clip generation) derive their own
//! seeds through [`mix`] so that parallel work and reordered work produce
//! identical outputs.

/// SplitMix64 finalizer; a full-avalanche mix of a 64-bit value.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive an independent seed from a base seed and a stream index.
///
/// Stable across platforms and releases: dataset regeneration depends on it.
pub fn mix(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_deterministic_and_spreads() {
        assert_eq!(mix(7, 0), mix(7, 0));
        assert_ne!(mix(7, 0), mix(7, 1));
        assert_ne!(mix(7, 0), mix(8, 0));
        // Pin the value: dataset layouts depend on this function never changing.
        assert_eq!(mix(0, 0), splitmix64(splitmix64(0)));
    }
}
