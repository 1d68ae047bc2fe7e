//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream addressed
//! by `(seed, purpose, index)`. The purpose selects the ChaCha stream id and the
//! index selects a disjoint window of the keystream, so a draw never depends on
//! the order in which other draws were made or on how work is split between
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keystream words reserved for a single index.
const WINDOW_BITS: u32 = 16;

/// What a stream is used for. Distinct purposes never share keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sample = 1,
    Noise = 2,
    Mask = 3,
    Reference = 4,
    Oracle = 5,
    Subsample = 6,
    Perturb = 7,
}

/// Stream for a single item (a sample point, a reference point, ...).
pub fn item_stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    assert!(index < (1u64 << 50), "stream index {index} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng.set_word_pos((index as u128) << WINDOW_BITS);
    rng
}

/// Stream for an unordered pair; `pair_stream(s, p, i, j) == pair_stream(s, p, j, i)`.
pub fn pair_stream(seed: u64, purpose: Purpose, i: usize, j: usize) -> ChaCha8Rng {
    item_stream(seed, purpose, pair_key(i, j))
}

/// Index of the unordered pair `{i, j}` in an enumeration that does not depend
/// on the total number of points.
pub fn pair_key(i: usize, j: usize) -> u64 {
    let (lo, hi) = if i < j { (i as u64, j as u64) } else { (j as u64, i as u64) };
    hi * (hi + 1) / 2 + lo
}

/// Derive a child seed, e.g. one per regeneration in a Monte Carlo study.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    item_stream(seed, Purpose::Oracle, index).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pair_streams_are_symmetric() {
        let a: f64 = pair_stream(3, Purpose::Noise, 4, 9).gen();
        let b: f64 = pair_stream(3, Purpose::Noise, 9, 4).gen();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn purposes_and_indices_are_disjoint() {
        let a: u64 = item_stream(1, Purpose::Noise, 0).gen();
        let b: u64 = item_stream(1, Purpose::Mask, 0).gen();
        let c: u64 = item_stream(1, Purpose::Noise, 1).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pair_keys_are_unique() {
        let mut seen = std::collections::HashSet::new();
        for j in 0..60 {
            for i in 0..=j {
                assert!(seen.insert(pair_key(i, j)));
            }
        }
    }
}
