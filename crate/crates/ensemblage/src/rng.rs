//! Seeded pseudo-random number generation.
//!
//! Deliberation runs must replay bit-for-bit from a config and a 64-bit seed,
//! on any platform and under any future dependency set. We therefore keep the
//! generator in-tree (xoshiro256** seeded through splitmix64) instead of
//! depending on an external RNG crate whose stream could change between
//! releases.

/// A deterministic 64-bit RNG (xoshiro256**).
///
/// Two generators created from the same seed produce the same stream. Use
/// [`SeededRng::derive`] to obtain an independent stream keyed off the same
/// base seed, e.g. one stream per chain cycle for shuffling.
#[derive(Debug, Clone)]
pub struct SeededRng {
    base_seed: u64,
    state: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng {
            base_seed: seed,
            state,
        }
    }

    /// An independent generator derived from this generator's base seed and a
    /// stream label. Independent of how much of this generator's own stream
    /// has been consumed.
    pub fn derive(&self, stream: u64) -> Self {
        let mut sm = self.base_seed;
        let a = splitmix64(&mut sm);
        let mut sm2 = a ^ stream.wrapping_mul(0xA24B_AED4_963E_E407);
        SeededRng::new(splitmix64(&mut sm2))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform integer in `0..n`. Rejection sampling keeps the draw unbiased.
    pub fn range(&mut self, n: u64) -> u64 {
        assert!(n > 0, "range bound must be positive");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_is_consumption_independent() {
        let mut a = SeededRng::new(7);
        let b = SeededRng::new(7);
        for _ in 0..13 {
            a.next_u64();
        }
        let mut da = a.derive(3);
        let mut db = b.derive(3);
        for _ in 0..10 {
            assert_eq!(da.next_u64(), db.next_u64());
        }
    }

    #[test]
    fn derive_streams_differ() {
        let r = SeededRng::new(7);
        assert_ne!(r.derive(0).next_u64(), r.derive(1).next_u64());
    }

    #[test]
    fn range_is_in_bounds_and_covers() {
        let mut r = SeededRng::new(1);
        let mut seen = [false; 5];
        for _ in 0..200 {
            seen[r.range(5) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn f64_is_unit_interval() {
        let mut r = SeededRng::new(9);
        for _ in 0..1000 {
            let v = r.f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn shuffle_permutes() {
        let mut r = SeededRng::new(11);
        let mut xs: Vec<u32> = (0..10).collect();
        r.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}
