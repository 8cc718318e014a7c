//! Seeded, portable random number generation.
//!
//! Everything stochastic in this crate (dropout masks, attack random starts,
//! dataset generation, epoch shuffles) draws from [`SeededRng`], a SplitMix64
//! generator with a 64-bit state. The generator is implemented here rather
//! than pulled from a crate so that the byte stream is pinned: the same seed
//! produces the same sequence on every platform and for every future build.
//!
//! Streams are *derived*, not shared. A consumer that needs randomness for
//! epoch `e`, batch `b` takes `root.stream("attack-init").child(e).child(b)`,
//! which is a pure function of the seed and the path. Two training modes that
//! skip different steps therefore still see identical draws for the steps they
//! share, which is what makes the fixed-budget reduction bit-exact.

/// Identifier reported by [`SeededRng::algorithm`].
pub const ALGORITHM: &str = "splitmix64";

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic generator with a 64-bit seed-derived state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            state: mix(seed ^ GOLDEN_GAMMA),
        }
    }

    /// Name of the underlying generator.
    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    /// Derive an independent named stream without advancing this one.
    pub fn stream(&self, label: &str) -> SeededRng {
        SeededRng {
            state: mix(self.state ^ fnv1a(label.as_bytes())),
        }
    }

    /// Derive an independent indexed substream without advancing this one.
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng {
            state: mix(self.state ^ index.wrapping_mul(GOLDEN_GAMMA) ^ 0x5851_f42d_4c95_7f2d),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n) via widening multiply (deterministic, unbiased
    /// enough for shuffles at desk scale).
    pub fn below(&mut self, n: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
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
    fn different_seeds_diverge() {
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(2);
        let same = (0..16).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn streams_are_independent_of_parent_use() {
        let root = SeededRng::new(7);
        let s1 = root.stream("dropout");
        let mut advanced = root.clone();
        advanced.next_u64();
        // stream() is a pure function of the state it is called on.
        assert_eq!(root.stream("dropout"), s1);
        assert_ne!(advanced.stream("dropout"), s1);
        assert_ne!(root.stream("attack-init"), s1);
    }

    #[test]
    fn children_distinct() {
        let root = SeededRng::new(7).stream("shuffle");
        assert_ne!(root.child(0), root.child(1));
        assert_eq!(root.child(3), root.child(3));
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = SeededRng::new(99);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn uniform_covers_range() {
        let mut rng = SeededRng::new(5);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let x = rng.uniform(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&x));
            min = min.min(x);
            max = max.max(x);
        }
        assert!(min < -1.9 && max > 2.9);
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = SeededRng::new(11);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.next_gaussian()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = SeededRng::new(3);
        let mut v: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
        assert_ne!(v, (0..50).collect::<Vec<u32>>());
    }
}
