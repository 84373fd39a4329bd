//! Uniform keep-set sampling over `U(T, k)`, exact enumeration of all
//! `C(T, k)` keep sets, and the binomial ratios the certificates are built on.

use itertools::Itertools;
use num_rational::Ratio;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::IndexSet;

/// Largest `T` for which binomial coefficients are computed exactly in `u128`.
pub const EXACT_MAX_LEN: usize = 64;

/// How `ρ·T` is turned into a whole number of masked positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    HalfUp,
    Floor,
}

/// Number of unmasked positions: `T - round(ρ·T)`, clamped to `[0, T]`.
pub fn keep_count(len: usize, mask_ratio: f64, rounding: Rounding) -> usize {
    // the epsilon absorbs representation error such as 0.3 * 10 = 2.9999...
    let masked = mask_ratio.clamp(0.0, 1.0) * len as f64;
    let masked = match rounding {
        Rounding::HalfUp => (masked + 0.5 + 1e-9).floor(),
        Rounding::Floor => (masked + 1e-9).floor(),
    } as usize;
    len - masked.min(len)
}

/// The uniform distribution over all `k`-subsets of `{1, ..., T}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetDistribution {
    pub len: usize,
    pub keep: usize,
}

impl SubsetDistribution {
    pub fn new(len: usize, keep: usize) -> Result<Self> {
        if keep > len {
            return Err(Error::InvalidParams(format!(
                "keep count {keep} exceeds length {len}"
            )));
        }
        Ok(SubsetDistribution { len, keep })
    }

    /// `C(T, k)` as a float; exact for every value that fits in 53 bits.
    pub fn support_size(&self) -> f64 {
        binom_f64(self.len, self.keep)
    }
}

/// A seeded, replayable random stream.
///
/// Streams with equal `(seed, stream_id)` produce identical draws. Workers
/// never share a stream; each derives its own id from a descriptive label.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    /// Derives the stream id from a label such as `certify.q12.beta.r3`.
    pub fn named(seed: u64, label: &str) -> Self {
        RngStream::new(seed, fnv1a64(label.as_bytes()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Draws one keep set with a partial Fisher-Yates shuffle of `1..=T`.
pub fn sample_keep_set<R: Rng + ?Sized>(dist: SubsetDistribution, rng: &mut R) -> IndexSet {
    let mut pool: Vec<usize> = (1..=dist.len).collect();
    for i in 0..dist.keep {
        let j = rng.gen_range(i..dist.len);
        pool.swap(i, j);
    }
    pool.truncate(dist.keep);
    pool.sort_unstable();
    IndexSet::from_sorted(pool)
}

/// Draws a full uniform permutation of `1..=T`. Every prefix of length `r`
/// is itself a uniform draw from `U(T, r)`, which lets callers nest sets.
pub fn sample_permutation<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (1..=len).collect();
    for i in 0..len.saturating_sub(1) {
        let j = rng.gen_range(i..len);
        pool.swap(i, j);
    }
    pool
}

/// Every keep set of the distribution, in lexicographic order.
pub fn enumerate_keep_sets(
    dist: SubsetDistribution,
    cap: u64,
) -> Result<impl Iterator<Item = IndexSet>> {
    let count = dist.support_size();
    if count > cap as f64 {
        return Err(Error::TooLarge { count, cap });
    }
    Ok((1..=dist.len)
        .combinations(dist.keep)
        .map(IndexSet::from_sorted))
}

/// Exact `C(n, k)`, or `None` on overflow.
pub fn binom_u128(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

pub fn binom_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `C(T-R, k) / C(T, k)`: the probability that a uniform keep set misses a
/// fixed set of `R` positions.
///
/// Evaluated as a telescoping product over `min(k, R)` factors, so no
/// factorial is ever formed.
pub fn binom_ratio(len: usize, keep: usize, radius: usize) -> f64 {
    assert!(keep <= len && radius <= len, "binom_ratio({len}, {keep}, {radius})");
    if len - radius < keep {
        return 0.0;
    }
    let (a, b) = if keep <= radius { (radius, keep) } else { (keep, radius) };
    // C(T-a, b) / C(T, b) == prod_{i<b} (T-a-i)/(T-i), symmetric in (a, b)
    (0..b).fold(1.0, |acc, i| acc * (len - a - i) as f64 / (len - i) as f64)
}

/// Exact rational form of [`binom_ratio`] for `T <= 64`.
pub fn binom_ratio_exact(len: usize, keep: usize, radius: usize) -> Result<Ratio<u128>> {
    if len > EXACT_MAX_LEN {
        return Err(Error::InvalidParams(format!(
            "exact binomial path supports T <= {EXACT_MAX_LEN}, got {len}"
        )));
    }
    if keep > len || radius > len {
        return Err(Error::InvalidParams(format!(
            "need k, R <= T (T={len}, k={keep}, R={radius})"
        )));
    }
    let num = binom_u128(len - radius, keep).expect("T <= 64 fits u128");
    let den = binom_u128(len, keep).expect("T <= 64 fits u128");
    Ok(Ratio::new(num, den))
}
