//! Stateless mixing used for seed derivation and counter-based noise.

/// One SplitMix64 output step; a bijection on `u64` with good avalanche.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` addressed by `(key, a, b)`.
pub fn unit(key: u64, a: u64, b: u64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(key) ^ a) ^ b);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
