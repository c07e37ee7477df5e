use super::LoggedRecord;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps `(key, seed)` to `[0, 1)`; stable across platforms and releases.
pub fn stable_unit_hash(key: &str, seed: u64) -> f64 {
    // FNV-1a over the bytes, then a splitmix finalizer keyed by the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mixed = splitmix64(h ^ splitmix64(seed));
    (mixed >> 11) as f64 / (1u64 << 53) as f64
}

/// Splits records into `(train, validation)` so that every record of a user
/// lands on the same side. Order within each side is preserved.
pub fn split_by_user(
    records: Vec<LoggedRecord>,
    validation_fraction: f64,
    seed: u64,
) -> (Vec<LoggedRecord>, Vec<LoggedRecord>) {
    assert!(
        validation_fraction > 0.0 && validation_fraction < 1.0,
        "validation fraction must be in (0, 1)"
    );
    records
        .into_iter()
        .partition(|r| stable_unit_hash(&r.user_id, seed) >= validation_fraction)
}
