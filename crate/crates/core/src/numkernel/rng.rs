//! Seeded pseudo-random streams.
//!
//! The generator is xoshiro256** seeded through SplitMix64 (the reference
//! `seed_from_u64` expansion). Derived quantities are defined here so other
//! implementations can reproduce the streams bit for bit:
//!
//! * `uniform()` = `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! * `normal()` = Box-Muller on two fresh uniforms `u1, u2`:
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; no spare value is cached.
//! * `below(n)` = `(next_u64() as u128 * n) >> 64`.
//! * `split(name)` seeds a child stream with
//!   `splitmix64(seed ^ fnv1a64(name))`, independent of draws already taken.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::array::fnv1a64;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    draws: u64,
    inner: Xoshiro256StarStar,
}

/// One SplitMix64 output step applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            draws: 0,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit words drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Deterministic child stream for a named consumer.
    pub fn split(&self, name: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ fnv1a64(name.as_bytes())))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Index drawn from a discrete distribution by inverse CDF on one uniform.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left the cumulative sum just below 1
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.draws(), 1000);
    }

    #[test]
    fn split_is_independent_of_parent_draws() {
        let root = Rng::new(7);
        let mut advanced = root.clone();
        advanced.next_u64();
        assert_eq!(root.split("data").next_u64(), advanced.split("data").next_u64());
        assert_ne!(root.split("data").next_u64(), root.split("init").next_u64());
    }

    #[test]
    fn splitmix_reference_value() {
        // first output of the reference SplitMix64 seeded with 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut r = Rng::new(3);
        let n = 200_000;
        let (mut su, mut sn, mut sn2) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            su += u;
            let z = r.normal();
            sn += z;
            sn2 += z * z;
        }
        let n = n as f64;
        assert!((su / n - 0.5).abs() < 0.01);
        assert!((sn / n).abs() < 0.01);
        assert!((sn2 / n - 1.0).abs() < 0.02);
    }

    #[test]
    fn categorical_respects_zero_mass() {
        let mut r = Rng::new(9);
        for _ in 0..1000 {
            assert_eq!(r.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
