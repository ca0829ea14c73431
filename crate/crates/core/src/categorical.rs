//! Quantized estimation of `(q, n)`-categorical random variables.
//!
//! Categories are discovered on the fly and compared by exact bit equality
//! of a canonical key. Rounding `n·Z_i/m` to the nearest integer (ties
//! downward) recovers the true counts `n_i` once `m ≥ 2n² ln(2n/δ)`, with
//! probability at least `1 − δ`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CategoricalError {
    #[error("cannot round {0}: input must be finite and nonnegative")]
    InvalidRoundingInput(f64),
    #[error("failure probability {0} must lie strictly between 0 and 1")]
    InvalidDelta(f64),
    #[error("n and k must be positive")]
    EmptyDomain,
}

/// Something that can be counted as a category. Two payloads fall into the
/// same category iff their keys are equal.
pub trait Payload {
    type Key: Ord + Clone;

    fn key(&self) -> Self::Key;
}

impl Payload for DVector<f64> {
    type Key = Vec<u64>;

    fn key(&self) -> Vec<u64> {
        self.iter().map(|x| x.to_bits()).collect()
    }
}

impl Payload for f64 {
    type Key = u64;

    fn key(&self) -> u64 {
        self.to_bits()
    }
}

macro_rules! integer_payload {
    ($($t:ty),*) => {$(
        impl Payload for $t {
            type Key = $t;

            fn key(&self) -> $t {
                *self
            }
        }
    )*};
}
integer_payload!(u8, u16, u32, u64, usize, i32, i64);

/// Nearest integer with exact half-integers rounded down: `⌈a − ½⌉`.
pub fn rnd(a: f64) -> Result<u64, CategoricalError> {
    if !a.is_finite() || a < 0.0 {
        return Err(CategoricalError::InvalidRoundingInput(a));
    }
    Ok(libm::ceil(a - 0.5).max(0.0) as u64)
}

/// `rnd(num / den)` in exact integer arithmetic.
pub fn rnd_ratio(num: u64, den: u64) -> u64 {
    assert!(den > 0, "zero denominator");
    let (q, r) = (num / den, num % den);
    // r/den > 1/2 rounds up; r/den == 1/2 stays down.
    if 2 * (r as u128) > den as u128 {
        q + 1
    } else {
        q
    }
}

/// `⌈2n² ln(2n/δ)⌉`, the sample size for exact recovery w.p. `1 − δ`.
pub fn required_samples(n: usize, delta: f64) -> Result<u64, CategoricalError> {
    required_samples_batch(n, 1, delta)
}

/// `⌈2n² ln(2nk/δ)⌉`: per-point sample size when `k` recoveries share the
/// failure budget `δ` through a union bound.
pub fn required_samples_batch(n: usize, k: usize, delta: f64) -> Result<u64, CategoricalError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CategoricalError::InvalidDelta(delta));
    }
    if n == 0 || k == 0 {
        return Err(CategoricalError::EmptyDomain);
    }
    let n = n as f64;
    let m = 2.0 * n * n * libm::log(2.0 * n * k as f64 / delta);
    Ok(libm::ceil(m) as u64)
}

/// Empirical counters `Z_i` over categories discovered so far.
#[derive(Debug, Clone)]
pub struct CategoryTable<P: Payload> {
    n: usize,
    total: u64,
    categories: Vec<(P, u64)>,
    index: BTreeMap<P::Key, usize>,
}

impl<P: Payload> CategoryTable<P> {
    /// An empty table for a distribution with denominator `n`.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "denominator must be positive");
        Self { n, total: 0, categories: Vec::new(), index: BTreeMap::new() }
    }

    /// A table with injected counters; payloads must be pairwise distinct.
    pub fn with_counts(n: usize, entries: impl IntoIterator<Item = (P, u64)>) -> Self {
        let mut table = Self::new(n);
        for (payload, count) in entries {
            let key = payload.key();
            assert!(!table.index.contains_key(&key), "duplicate category");
            table.index.insert(key, table.categories.len());
            table.categories.push((payload, count));
            table.total += count;
        }
        table
    }

    pub fn ingest(&mut self, payload: P) {
        let key = payload.key();
        self.ingest_keyed(key, || payload);
    }

    /// Like [`ingest`](Self::ingest) with a precomputed key; the payload is
    /// only materialized for a new category.
    pub fn ingest_keyed(&mut self, key: P::Key, payload: impl FnOnce() -> P) {
        self.total += 1;
        match self.index.get(&key) {
            Some(&slot) => self.categories[slot].1 += 1,
            None => {
                self.index.insert(key, self.categories.len());
                self.categories.push((payload(), 1));
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of samples ingested, `m`.
    pub fn samples(&self) -> u64 {
        self.total
    }

    /// Number of discovered categories, `q̂`.
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// `(payload, Z_i)` in discovery order.
    pub fn categories(&self) -> &[(P, u64)] {
        &self.categories
    }

    pub fn count_of(&self, payload: &P) -> u64 {
        self.index.get(&payload.key()).map_or(0, |&slot| self.categories[slot].1)
    }

    /// `n̂_i = rnd(n·Z_i/m)` in discovery order.
    pub fn quantized_counts(&self) -> Vec<u64> {
        assert!(self.total > 0, "no samples ingested");
        self.categories
            .iter()
            .map(|(_, z)| rnd_ratio(self.n as u64 * z, self.total))
            .collect()
    }

    /// `(n̂_i, s_i)` in canonical key order, independent of sampling order.
    pub fn quantized_terms(&self) -> Vec<(u64, &P)> {
        assert!(self.total > 0, "no samples ingested");
        self.index
            .values()
            .map(|&slot| {
                let (payload, z) = &self.categories[slot];
                (rnd_ratio(self.n as u64 * z, self.total), payload)
            })
            .collect()
    }

    /// `(1/n) Σ n̂_i s_i`; `combine` receives the canonical-order terms and `n`.
    pub fn quantized_mean<T>(&self, combine: impl FnOnce(&[(u64, &P)], usize) -> T) -> T {
        combine(&self.quantized_terms(), self.n)
    }

    /// Sorted multiset `{(key, Z_i)}`.
    pub fn multiset(&self) -> Vec<(P::Key, u64)> {
        self.index.iter().map(|(k, &slot)| (k.clone(), self.categories[slot].1)).collect()
    }
}

impl CategoryTable<f64> {
    pub fn quantized_scalar_mean(&self) -> f64 {
        self.quantized_mean(|terms, n| terms.iter().map(|(k, s)| *k as f64 * **s).sum::<f64>() / n as f64)
    }
}

/// Outcome of enumerating every sample sequence for `n` equiprobable categories.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub n: usize,
    pub m: u32,
    /// `n^m` equiprobable sequences.
    pub sequences: u64,
    /// `Σ` over sequences of `Σ_i n̂_i`.
    pub quantized_sum_total: u64,
    /// `E[Σ_i n̂_i]`.
    pub expected_sum: f64,
    /// Distinct sorted count profiles with their quantized counterparts.
    pub table: Vec<(Vec<u64>, Vec<u64>)>,
}

/// Enumerates all `n^m` sequences of `m` draws from `n` equiprobable
/// categories and averages the sum of quantized counts.
pub fn bias_enumeration(n: usize, m: u32) -> BiasReport {
    assert!(n > 0 && m > 0);
    let sequences = (n as u64).pow(m);
    let mut total = 0u64;
    let mut profiles: BTreeMap<Vec<u64>, Vec<u64>> = BTreeMap::new();
    let mut counts = alloc::vec![0u64; n];
    for seq in 0..sequences {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut rest = seq;
        for _ in 0..m {
            counts[(rest % n as u64) as usize] += 1;
            rest /= n as u64;
        }
        let quantized: Vec<u64> = counts.iter().map(|&z| rnd_ratio(n as u64 * z, m as u64)).collect();
        total += quantized.iter().sum::<u64>();

        let mut profile = counts.clone();
        profile.sort_unstable_by(|a, b| b.cmp(a));
        profiles.entry(profile).or_insert_with_key(|p| p.iter().map(|&z| rnd_ratio(n as u64 * z, m as u64)).collect());
    }
    let mut table: Vec<_> = profiles.into_iter().collect();
    table.reverse();
    BiasReport {
        n,
        m,
        sequences,
        quantized_sum_total: total,
        expected_sum: total as f64 / sequences as f64,
        table,
    }
}

/// The `n = q = 3`, `m = 5` case, where `E[Σ n̂_i] > 3`.
pub fn bias_demo() -> BiasReport {
    bias_enumeration(3, 5)
}
