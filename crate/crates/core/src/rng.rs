//! Counter-based, path-keyed random streams.
//!
//! A stream is identified by a root seed plus a hierarchical path
//! (`root.child(EPOCH).child(3).child(SAMPLE).child(17)`). Every path is
//! hashed into a 64-bit key, and the stream output is SplitMix64 run from
//! that key. Two streams with the same seed and path always produce the same
//! sequence no matter what other streams were consumed first, which is what
//! lets per-sample augmentation run in any order without changing results.

use alloc::vec::Vec;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known path components. Any `u64` can be used as a path component;
/// these only keep the top-level domains apart.
pub mod path {
    pub const INIT: u64 = 0x1000;
    pub const EPOCH: u64 = 0x1001;
    pub const BATCH: u64 = 0x1002;
    pub const SAMPLE: u64 = 0x1003;
    pub const SHUFFLE: u64 = 0x1004;
    pub const MEASURE: u64 = 0x1005;
    pub const SYNTHETIC: u64 = 0x1006;
    pub const PREVIEW: u64 = 0x1007;
    pub const CHECK: u64 = 0x1008;
    pub const DROPOUT: u64 = 0x1009;
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngStream {
    seed: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    /// Root stream for `seed` (empty path).
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            key: mix64(seed ^ 0x5EED_5EED_5EED_5EED),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream one level deeper along the path. Ignores how many values the
    /// parent has produced.
    pub fn child(&self, component: u64) -> Self {
        let key = mix64(self.key.rotate_left(17) ^ mix64(component.wrapping_add(GOLDEN)));
        RngStream {
            seed: self.seed,
            key,
            counter: 0,
        }
    }

    /// `child` for several components at once.
    pub fn descend(&self, components: &[u64]) -> Self {
        components.iter().fold(self.clone(), |s, &c| s.child(c))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller; the second variate is discarded so the
    /// stream state stays a single counter.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_path_same_sequence() {
        let a = RngStream::new(9).descend(&[path::EPOCH, 4, path::SAMPLE, 11]);
        let mut b = RngStream::new(9);
        // consuming the parent must not affect children
        b.next_u64();
        let mut b = b.child(path::EPOCH).child(4).child(path::SAMPLE).child(11);
        let mut a = a;
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn sibling_paths_differ() {
        let root = RngStream::new(1);
        let mut a = root.child(0);
        let mut b = root.child(1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_bounds_and_below() {
        let mut r = RngStream::new(3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            let o = r.uniform_open();
            assert!(o > 0.0 && o < 1.0);
            assert!(r.below(7) < 7);
        }
    }

    #[test]
    fn below_is_roughly_uniform() {
        let mut r = RngStream::new(5);
        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[r.below(5)] += 1;
        }
        for c in counts {
            assert!((9_500..10_500).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngStream::new(2).permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
