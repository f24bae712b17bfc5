//! Deterministic seed derivation.
//!
//! Every source of randomness in a run (parameter init, data subsampling,
//! poison selection, channel noise, evaluation noise) draws from its own
//! substream derived from one master seed and a purpose label. Runs are
//! reproducible end to end from the master seed alone, and ablations can
//! vary one randomness source without disturbing the others.

/// SplitMix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the substream seed for `(master, label, index)`.
///
/// Distinct labels or indices give statistically independent streams;
/// the same triple always gives the same seed.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut state = splitmix64(master);
    for &byte in label.as_bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    splitmix64(state ^ index.wrapping_mul(0xA24B_AED4_963E_E407))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_inputs_same_seed() {
        assert_eq!(derive_seed(7, "noise", 3), derive_seed(7, "noise", 3));
    }

    #[test]
    fn labels_and_indices_separate_streams() {
        let base = derive_seed(7, "noise", 0);
        assert_ne!(base, derive_seed(7, "noise", 1));
        assert_ne!(base, derive_seed(7, "init", 0));
        assert_ne!(base, derive_seed(8, "noise", 0));
    }

    #[test]
    fn label_bytes_are_not_position_free() {
        // "ab"+index vs "ba"+index must not collide by construction.
        assert_ne!(derive_seed(0, "ab", 0), derive_seed(0, "ba", 0));
    }
}
