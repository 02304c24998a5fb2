//! Deterministic seed derivation for independent random streams.

/// One step of the SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for the stream named `tag` under a global seed.
pub fn derive_seed(global: u64, tag: &str) -> u64 {
    splitmix64(global ^ fnv1a(tag.as_bytes()))
}

/// Seed for the `index`-th member of a family of streams (trees, rounds).
pub fn indexed_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}
