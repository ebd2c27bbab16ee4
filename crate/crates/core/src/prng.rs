//! Counter-based pseudo-randomness.
//!
//! Every random quantity in the engine (sketch entries, sampling decisions,
//! cost perturbations) is a pure function of a seed and a coordinate tuple,
//! so nothing random ever needs to be stored or replayed from a stateful
//! generator. This is what makes sketch columns reproducible from
//! `(seed, column)` alone and lets two parties derive identical randomness
//! from a shared seed without putting it on the wire.

/// SplitMix64 finalizer: a bijective avalanche mix on 64-bit words.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of a seed and up to three coordinates.
#[inline]
pub fn hash3(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix(seed ^ 0x243f6a8885a308d3);
    h = mix(h ^ a);
    h = mix(h ^ b);
    h = mix(h ^ c);
    h
}

/// Derives an independent stream seed from a master seed and a label.
#[inline]
pub fn derive_seed(master: u64, label: u64) -> u64 {
    hash3(master, label, 0x5eed, 0)
}

/// Uniform float in [0, 1) from a hash value.
#[inline]
pub fn unit_f64(h: u64) -> f64 {
    // 53 high bits -> [0, 1)
    (h >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Rademacher sign (+1 or -1) keyed by (seed, row, col).
#[inline]
pub fn rademacher(seed: u64, row: u64, col: u64) -> f64 {
    if hash3(seed, row, col, 1) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Uniform integer in [1, hi] keyed by (seed, id); hi must be >= 1.
#[inline]
pub fn uniform_1_to(seed: u64, id: u64, hi: u64) -> u64 {
    debug_assert!(hi >= 1);
    1 + hash3(seed, id, 2, 0) % hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(hash3(7, 1, 2, 3), hash3(7, 1, 2, 3));
        assert_ne!(hash3(7, 1, 2, 3), hash3(8, 1, 2, 3));
        assert_ne!(hash3(7, 1, 2, 3), hash3(7, 2, 1, 3));
    }

    #[test]
    fn unit_range() {
        for i in 0..1000 {
            let u = unit_f64(hash3(3, i, 0, 0));
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn rademacher_is_balanced() {
        let total: f64 = (0..10_000).map(|i| rademacher(11, i, 42)).sum();
        assert!(total.abs() < 300.0, "signs badly unbalanced: {total}");
    }

    #[test]
    fn uniform_bounds() {
        for i in 0..1000 {
            let v = uniform_1_to(5, i, 17);
            assert!((1..=17).contains(&v));
        }
    }
}
