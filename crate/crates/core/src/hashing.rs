//! Stable 64-bit mixing used for seeds, feature hashing and bucket keys.
//! Unlike `std::hash`, outputs are fixed across processes and platforms.

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `value` into a running hash.
#[inline]
pub fn combine(h: u64, value: u64) -> u64 {
    mix64(h ^ mix64(value))
}

/// Derives an independent seed for a named stage, so that adding or removing
/// one consumer never shifts another's random stream.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(mix64(master), |h, b| combine(h, b as u64))
}
