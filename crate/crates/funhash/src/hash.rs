//! Seedable families of index/sign hash functions over matrix entry coordinates.
//!
//! Each `HashPair` maps an entry coordinate `(i, j)` to a bucket in `[0, K)`
//! plus a sign in `{-1, +1}`. A `HashFamily` holds `U` such pairs with
//! independently derived seeds; the pair order is fixed and significant.

use crate::error::{Error, Result};

const PRIME64_1: u64 = 0x9E3779B185EBCA87;
const PRIME64_2: u64 = 0xC2B2AE3D27D4EB4F;
const PRIME64_3: u64 = 0x165667B19E3779F9;
const PRIME64_4: u64 = 0x85EBCA77C2B2AE63;
const PRIME64_5: u64 = 0x27D4EB2F165667C5;

/// xxHash64 over an arbitrary byte slice.
pub fn xxh64(data: &[u8], seed: u64) -> u64 {
    let len = data.len();
    let mut rest = data;
    let mut h: u64;

    if len >= 32 {
        let mut v1 = seed.wrapping_add(PRIME64_1).wrapping_add(PRIME64_2);
        let mut v2 = seed.wrapping_add(PRIME64_2);
        let mut v3 = seed;
        let mut v4 = seed.wrapping_sub(PRIME64_1);
        while rest.len() >= 32 {
            v1 = round(v1, read_u64(&rest[0..8]));
            v2 = round(v2, read_u64(&rest[8..16]));
            v3 = round(v3, read_u64(&rest[16..24]));
            v4 = round(v4, read_u64(&rest[24..32]));
            rest = &rest[32..];
        }
        h = v1
            .rotate_left(1)
            .wrapping_add(v2.rotate_left(7))
            .wrapping_add(v3.rotate_left(12))
            .wrapping_add(v4.rotate_left(18));
        h = merge_round(h, v1);
        h = merge_round(h, v2);
        h = merge_round(h, v3);
        h = merge_round(h, v4);
    } else {
        h = seed.wrapping_add(PRIME64_5);
    }

    h = h.wrapping_add(len as u64);

    while rest.len() >= 8 {
        h ^= round(0, read_u64(&rest[0..8]));
        h = h.rotate_left(27).wrapping_mul(PRIME64_1).wrapping_add(PRIME64_4);
        rest = &rest[8..];
    }
    if rest.len() >= 4 {
        h ^= u64::from(read_u32(&rest[0..4])).wrapping_mul(PRIME64_1);
        h = h.rotate_left(23).wrapping_mul(PRIME64_2).wrapping_add(PRIME64_3);
        rest = &rest[4..];
    }
    for &byte in rest {
        h ^= u64::from(byte).wrapping_mul(PRIME64_5);
        h = h.rotate_left(11).wrapping_mul(PRIME64_1);
    }

    h ^= h >> 33;
    h = h.wrapping_mul(PRIME64_2);
    h ^= h >> 29;
    h = h.wrapping_mul(PRIME64_3);
    h ^= h >> 32;
    h
}

#[inline]
fn round(acc: u64, input: u64) -> u64 {
    acc.wrapping_add(input.wrapping_mul(PRIME64_2))
        .rotate_left(31)
        .wrapping_mul(PRIME64_1)
}

#[inline]
fn merge_round(acc: u64, val: u64) -> u64 {
    (acc ^ round(0, val)).wrapping_mul(PRIME64_1).wrapping_add(PRIME64_4)
}

#[inline]
fn read_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().unwrap())
}

#[inline]
fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().unwrap())
}

/// xxHash64 over a tuple of 64-bit words, each serialized little-endian.
pub fn hash_words(words: &[u64], seed: u64) -> u64 {
    let mut buf = [0u8; 64];
    let n = words.len() * 8;
    assert!(n <= buf.len(), "word tuple too long");
    for (k, w) in words.iter().enumerate() {
        buf[k * 8..k * 8 + 8].copy_from_slice(&w.to_le_bytes());
    }
    xxh64(&buf[..n], seed)
}

// Domain tags keep index and sign streams independent even though both are
// derived from the same (layer_seed, u).
const DOMAIN_INDEX: u64 = 0x01;
const DOMAIN_SIGN: u64 = 0x02;

/// One index-hash/sign-hash pair: `(i, j) -> ([0, K), {-1, +1})`.
///
/// Pure function of its seeds and the coordinates; cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashPair {
    seed_index: u64,
    seed_sign: u64,
    buckets: usize,
}

impl HashPair {
    /// Derive the pair for function index `u` within a family keyed by `family_seed`.
    pub fn new(family_seed: u64, u: usize, buckets: usize) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::Config("hash bucket count K must be >= 1".into()));
        }
        Ok(Self {
            seed_index: hash_words(&[u as u64, DOMAIN_INDEX], family_seed),
            seed_sign: hash_words(&[u as u64, DOMAIN_SIGN], family_seed),
            buckets,
        })
    }

    /// Bucket index in `[0, K)` for entry `(i, j)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        (hash_words(&[i as u64, j as u64], self.seed_index) % self.buckets as u64) as usize
    }

    /// Sign factor for entry `(i, j)`, from the high bit of a separately keyed hash.
    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> f64 {
        if hash_words(&[i as u64, j as u64], self.seed_sign) >> 63 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }
}

/// An ordered family of `U` independent hash pairs sharing one bucket count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashFamily {
    layer_seed: u64,
    pairs: Vec<HashPair>,
    buckets: usize,
}

impl HashFamily {
    pub fn new(layer_seed: u64, num_pairs: usize, buckets: usize) -> Result<Self> {
        if num_pairs == 0 {
            return Err(Error::Config("hash family needs at least one pair".into()));
        }
        let pairs = (0..num_pairs)
            .map(|u| HashPair::new(layer_seed, u, buckets))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layer_seed, pairs, buckets })
    }

    pub fn layer_seed(&self) -> u64 {
        self.layer_seed
    }

    /// Number of hash pairs (the `U` of the family).
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn pair(&self, u: usize) -> &HashPair {
        &self.pairs[u]
    }

    pub fn pairs(&self) -> &[HashPair] {
        &self.pairs
    }

    /// Fill `indices`/`signs` (each of length `U`) for entry `(i, j)` by online evaluation.
    #[inline]
    pub fn lookup_into(&self, i: usize, j: usize, indices: &mut [u32], signs: &mut [f64]) {
        for (u, pair) in self.pairs.iter().enumerate() {
            indices[u] = pair.index(i, j) as u32;
            signs[u] = pair.sign(i, j);
        }
    }
}

/// Default cap on precomputed hash cache size.
pub const DEFAULT_CACHE_BUDGET: usize = 1 << 30;

/// Precomputed `(index, sign)` tuples for every entry of a `d_out x d_in`
/// virtual matrix, row-major over `(i, j)` with the `U` functions innermost.
/// Contents are bit-identical to online evaluation.
#[derive(Debug, Clone)]
pub struct HashCache {
    d_out: usize,
    d_in: usize,
    num_pairs: usize,
    indices: Vec<u32>,
    signs: Vec<i8>,
}

impl HashCache {
    pub fn build(family: &HashFamily, d_out: usize, d_in: usize) -> Result<Self> {
        Self::build_with_budget(family, d_out, d_in, DEFAULT_CACHE_BUDGET)
    }

    pub fn build_with_budget(
        family: &HashFamily,
        d_out: usize,
        d_in: usize,
        budget_bytes: usize,
    ) -> Result<Self> {
        if d_out == 0 || d_in == 0 {
            return Err(Error::Config("virtual dimensions must be positive".into()));
        }
        let u = family.len();
        let entries = d_out * d_in * u;
        let needed = entries * (std::mem::size_of::<u32>() + std::mem::size_of::<i8>());
        if needed > budget_bytes {
            return Err(Error::Resource {
                what: "hash cache",
                needed,
                budget: budget_bytes,
            });
        }
        let mut indices = vec![0u32; entries];
        let mut signs = vec![0i8; entries];
        for i in 0..d_out {
            for j in 0..d_in {
                let base = (i * d_in + j) * u;
                for (k, pair) in family.pairs().iter().enumerate() {
                    indices[base + k] = pair.index(i, j) as u32;
                    signs[base + k] = if pair.sign(i, j) > 0.0 { 1 } else { -1 };
                }
            }
        }
        Ok(Self { d_out, d_in, num_pairs: u, indices, signs })
    }

    #[inline]
    pub fn lookup_into(&self, i: usize, j: usize, indices: &mut [u32], signs: &mut [f64]) {
        debug_assert!(i < self.d_out && j < self.d_in);
        let base = (i * self.d_in + j) * self.num_pairs;
        for u in 0..self.num_pairs {
            indices[u] = self.indices[base + u];
            signs[u] = f64::from(self.signs[base + u]);
        }
    }

    pub fn num_entries(&self) -> usize {
        self.indices.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d_out, self.d_in, self.num_pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from the xxHash64 specification.
    #[test]
    fn xxh64_reference_vectors() {
        assert_eq!(xxh64(b"", 0), 0xEF46DB3751D8E999);
        assert_eq!(xxh64(b"a", 0), 0xD24EC4F1A98C6E5B);
        assert_eq!(xxh64(b"abc", 0), 0x44BC2CF5AD770999);
        // >= 32 bytes exercises the four-accumulator path
        assert_eq!(
            xxh64(b"0123456789abcdef0123456789abcdef0123", PRIME64_1),
            0x559E14CF34D7DE63
        );
    }

    #[test]
    fn hash_words_matches_le_serialization() {
        assert_eq!(hash_words(&[0], 0), 0x34C96ACDCADB1BBB);
        assert_eq!(hash_words(&[1, 2, 3], 42), 0x1B2AFF606CC20C8B);
        assert_eq!(hash_words(&[7, 123456789, 1 << 63], 0xDEADBEEF), 0x1F6ADE07F73CBE6F);
    }

    #[test]
    fn zero_buckets_is_config_error() {
        assert!(matches!(HashPair::new(1, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn single_bucket_forces_identity() {
        let pair = HashPair::new(99, 0, 1).unwrap();
        for (i, j) in [(0, 0), (3, 7), (100, 2000)] {
            assert_eq!(pair.index(i, j), 0);
        }
    }

    #[test]
    fn evaluation_is_pure() {
        let pair = HashPair::new(7, 2, 16).unwrap();
        for (i, j) in [(0usize, 0usize), (5, 11), (123, 456)] {
            assert_eq!(pair.index(i, j), pair.index(i, j));
            assert_eq!(pair.sign(i, j), pair.sign(i, j));
        }
    }

    #[test]
    fn sign_is_plus_or_minus_one_and_balanced() {
        let pair = HashPair::new(3, 0, 8).unwrap();
        let n = 100_000usize;
        let mut sum = 0.0;
        for e in 0..n {
            let s = pair.sign(e / 317, e % 317);
            assert!(s == 1.0 || s == -1.0);
            sum += s;
        }
        let mean = sum / n as f64;
        // 3-sigma bound for a fair coin
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "sign mean {mean} out of bounds");
    }

    // Chi-square statistic over bucket counts must stay below the 0.999
    // quantile of chi2(K-1); quantiles computed with scipy.stats.chi2.ppf.
    #[test]
    fn index_distribution_is_uniform() {
        let quantile = |k: usize| match k {
            2 => 10.8276,
            16 => 37.6973,
            256 => 330.5197,
            _ => unreachable!(),
        };
        for k in [2usize, 16, 256] {
            let pair = HashPair::new(0xA11CE, 1, k).unwrap();
            let n = 100_000usize;
            let mut counts = vec![0u64; k];
            for e in 0..n {
                counts[pair.index(e / 317, e % 317)] += 1;
            }
            let expected = n as f64 / k as f64;
            let chi2: f64 = counts
                .iter()
                .map(|&c| {
                    let d = c as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(chi2 < quantile(k), "chi2={chi2} for K={k} exceeds 0.999 quantile");
        }
    }

    #[test]
    fn pairs_are_decorrelated() {
        let family = HashFamily::new(0xFA111, 4, 64).unwrap();
        let n = 100_000usize;
        for a in 0..family.len() {
            for b in (a + 1)..family.len() {
                let (pa, pb) = (family.pair(a), family.pair(b));
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for e in 0..n {
                    let (i, j) = (e / 317, e % 317);
                    let x = pa.index(i, j) as f64;
                    let y = pb.index(i, j) as f64;
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
                let nf = n as f64;
                let cov = sxy / nf - (sx / nf) * (sy / nf);
                let vx = sxx / nf - (sx / nf) * (sx / nf);
                let vy = syy / nf - (sy / nf) * (sy / nf);
                let corr = cov / (vx * vy).sqrt();
                assert!(corr.abs() < 0.01, "pairs {a},{b} correlate: {corr}");
            }
        }
    }

    #[test]
    fn cache_smallest_case() {
        let family = HashFamily::new(5, 2, 4).unwrap();
        let cache = HashCache::build(&family, 1, 1).unwrap();
        assert_eq!(cache.num_entries(), 2);
    }

    #[test]
    fn cache_matches_online_evaluation() {
        let family = HashFamily::new(0xCAFE, 4, 8).unwrap();
        let cache = HashCache::build(&family, 8, 8).unwrap();
        let u = family.len();
        let mut ci = vec![0u32; u];
        let mut cs = vec![0f64; u];
        let mut oi = vec![0u32; u];
        let mut os = vec![0f64; u];
        for i in 0..8 {
            for j in 0..8 {
                cache.lookup_into(i, j, &mut ci, &mut cs);
                family.lookup_into(i, j, &mut oi, &mut os);
                assert_eq!(ci, oi, "index mismatch at ({i},{j})");
                assert_eq!(cs, os, "sign mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn cache_layout_arithmetic() {
        let family = HashFamily::new(1, 4, 32).unwrap();
        let cache = HashCache::build(&family, 1000, 1000).unwrap();
        assert_eq!(cache.num_entries(), 1000 * 1000 * 4);
    }

    #[test]
    fn cache_budget_enforced() {
        let family = HashFamily::new(1, 4, 32).unwrap();
        let err = HashCache::build_with_budget(&family, 1000, 1000, 1024).unwrap_err();
        assert!(matches!(err, Error::Resource { .. }));
    }
}
