//! Counter-based splittable random numbers.
//!
//! A [`RngKey`] is a pure value `(seed, stream)`. Draw `i` from a key is a
//! keyed hash of the counter `i`, so any consumer holding the same key sees
//! the same sequence regardless of thread or platform. Independent
//! sub-streams come from [`RngKey::split`] and [`RngKey::fold_in`].

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn labels into fold-in data.
pub fn label_hash(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub stream: u64,
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Derive a child key from arbitrary 64-bit data.
    pub fn fold_in(&self, data: u64) -> RngKey {
        let a = mix64(self.seed ^ mix64(self.stream.wrapping_add(GOLDEN)));
        let b = mix64(a ^ mix64(data.wrapping_mul(GOLDEN) ^ 0xD134_2543_DE82_EF95));
        RngKey {
            seed: b,
            stream: mix64(b ^ 0xA076_1D64_78BD_642F),
        }
    }

    pub fn fold_label(&self, label: &str) -> RngKey {
        self.fold_in(label_hash(label))
    }

    pub fn split(&self) -> (RngKey, RngKey) {
        (self.fold_in(0x5EED_0000), self.fold_in(0x5EED_0001))
    }

    pub fn split_n(&self, n: usize) -> Vec<RngKey> {
        (0..n as u64).map(|i| self.fold_in(0x5EED_1000 + i)).collect()
    }

    pub fn generator(&self) -> RngStream {
        RngStream {
            key_a: mix64(self.seed ^ 0x6A09_E667_F3BC_C909),
            key_b: mix64(self.stream ^ 0xBB67_AE85_84CA_A73B),
            counter: 0,
            spare_normal: None,
        }
    }

    /// Stable 64-bit digest of the key, used for key traces.
    pub fn digest(&self) -> u64 {
        mix64(self.seed ^ mix64(self.stream))
    }
}

/// Sequential reader over the counter space of one key.
#[derive(Clone, Debug)]
pub struct RngStream {
    key_a: u64,
    key_b: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.key_a ^ c.wrapping_mul(GOLDEN)) ^ self.key_b)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * self.next_f64()).exp()
    }

    /// Uniform integer in `0..n` (n > 0).
    pub fn below(&mut self, n: u64) -> u64 {
        // Lemire's multiply-shift; bias is below 2^-64 * n which is irrelevant here.
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Index drawn proportionally to non-negative weights.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut r = self.next_f64() * total;
        for (i, &w) in weights.iter().enumerate() {
            if r < w {
                return i;
            }
            r -= w;
        }
        weights.len() - 1
    }

    /// Standard normal via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Normal truncated to ±2 standard deviations by resampling.
    pub fn truncated_normal(&mut self) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z;
            }
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

/// I.i.d. standard normal tensor reproducible from `key`.
pub fn sample_normal(key: RngKey, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    key.generator().fill_normal(t.data_mut());
    t
}

pub fn sample_uniform(key: RngKey, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut g = key.generator();
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = g.uniform(lo, hi);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_draws() {
        let k = RngKey::new(7);
        assert_eq!(sample_normal(k, &[32]), sample_normal(k, &[32]));
    }

    #[test]
    fn normal_moments() {
        let n = 1_000_000;
        let t = sample_normal(RngKey::new(2024), &[n]);
        let mean = t.mean();
        let var = t.variance();
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn split_streams_do_not_collide_with_parent() {
        let parent = RngKey::new(99);
        let (a, b) = parent.split();
        let draws = |k: RngKey| {
            let mut g = k.generator();
            (0..1_000_000).map(|_| g.next_u64()).collect::<Vec<_>>()
        };
        let mut p = draws(parent);
        p.sort_unstable();
        for child in [a, b] {
            let mut g = child.generator();
            let collisions = (0..1_000_000)
                .filter(|_| p.binary_search(&g.next_u64()).is_ok())
                .count();
            assert_eq!(collisions, 0);
        }
        // children are also uncorrelated with each other
        let xa = sample_normal(a, &[100_000]);
        let xb = sample_normal(b, &[100_000]);
        let corr = xa.mul(&xb).unwrap().mean();
        assert!(corr.abs() < 4.0 / (100_000f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn fold_in_distinguishes_data() {
        let k = RngKey::new(1);
        assert_ne!(k.fold_in(1), k.fold_in(2));
        assert_ne!(k.fold_label("init"), k.fold_label("data"));
    }

    #[test]
    fn weighted_index_respects_zero_weights() {
        let mut g = RngKey::new(3).generator();
        for _ in 0..1000 {
            assert_eq!(g.weighted_index(&[0.0, 2.0, 0.0]), 1);
        }
    }
}
