//! Per-path seed derivation.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function; a bijection on `u64`.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` under master seed `master`.
///
/// Injective in `index` for a fixed master seed, and independent of how the
/// paths are later distributed over threads.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn distinct_over_a_batch() {
        let seeds: HashSet<u64> = (0..100_000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 100_000);
    }

    proptest! {
        #[test]
        fn injective_in_index(m in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
            prop_assume!(a != b);
            prop_assert_ne!(derive_seed(m, a), derive_seed(m, b));
        }
    }
}
