//! Feature-hashing oracles.
//!
//! The hashing trick maps a vector into `K` buckets with sign correction,
//! preserving inner products in expectation. This module provides the plain
//! feature hash, a Monte-Carlo verifier of its bias/variance behaviour, and
//! two exact inner-product reformulations of the compressed layer forward
//! pass that serve as independent cross-checks: the single-hash layer as
//! `w . phi(a)` per output unit, and the multi-hash layer as a dot product
//! over the enumerated space of signed bucket tuples.

use crate::error::{Error, Result};
use crate::hash::HashPair;
use crate::recon::ReconWorkspace;
use crate::vlayer::{LayerMode, VirtualLayer};

/// Largest `K^U` enumeration the reformulation oracle will build.
pub const DEFAULT_ENUM_CAP: usize = 4096;

/// A hashed feature vector.
#[derive(Debug, Clone)]
pub struct HashedFeature {
    /// Bucket count of one hash axis.
    pub buckets: usize,
    pub values: Vec<f64>,
}

/// `phi(x)[k] = sum over i with index(i) == k of sign(i) * x[i]`.
pub fn feature_hash(
    x: &[f64],
    index: impl Fn(usize) -> usize,
    sign: impl Fn(usize) -> f64,
    k: usize,
) -> HashedFeature {
    let mut values = vec![0.0; k];
    for (i, &xi) in x.iter().enumerate() {
        let bucket = index(i);
        debug_assert!(bucket < k);
        values[bucket] += sign(i) * xi;
    }
    HashedFeature { buckets: k, values }
}

/// Monte-Carlo report on the hash-kernel inner product `phi(x).phi(y)`.
#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    /// Mean of `phi(x).phi(y) - x.y` over independent hash draws.
    pub bias: f64,
    pub empirical_variance: f64,
    /// `(1/K) * sum_{i != j} (x_i^2 y_j^2 + x_i y_i x_j y_j)`.
    pub formula_variance: f64,
    /// Four standard errors of the mean, from the closed-form variance.
    pub bias_bound: f64,
}

impl LemmaReport {
    pub fn bias_ok(&self) -> bool {
        self.bias.abs() < self.bias_bound
    }

    pub fn variance_ok(&self, tolerance: f64) -> bool {
        (self.empirical_variance - self.formula_variance).abs()
            <= tolerance * self.formula_variance
    }
}

/// Estimate bias and variance of the hash kernel over `trials` independent
/// hash function draws, on a fixed pair of vectors derived from `seed`.
pub fn verify_lemma(n: usize, k: usize, trials: usize, seed: u64) -> LemmaReport {
    let (x, y) = lemma_vectors(n, seed);
    verify_lemma_on(&x, &y, k, trials, seed)
}

/// As [`verify_lemma`], with caller-supplied vectors.
pub fn verify_lemma_on(x: &[f64], y: &[f64], k: usize, trials: usize, seed: u64) -> LemmaReport {
    let n = x.len();
    assert_eq!(n, y.len());
    let exact: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in 0..trials {
        let pair = HashPair::new(seed, t, k).expect("k >= 1");
        let phi_x = feature_hash(x, |i| pair.index(i, 0), |i| pair.sign(i, 0), k);
        let phi_y = feature_hash(y, |i| pair.index(i, 0), |i| pair.sign(i, 0), k);
        let dot: f64 = phi_x
            .values
            .iter()
            .zip(&phi_y.values)
            .map(|(a, b)| a * b)
            .sum();
        let dev = dot - exact;
        sum += dev;
        sum_sq += dev * dev;
    }
    let tf = trials as f64;
    let bias = sum / tf;
    let empirical_variance = sum_sq / tf - bias * bias;

    let mut formula = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                formula += x[i] * x[i] * y[j] * y[j] + x[i] * y[i] * x[j] * y[j];
            }
        }
    }
    let formula_variance = formula / k as f64;

    LemmaReport {
        n,
        k,
        trials,
        bias,
        empirical_variance,
        formula_variance,
        bias_bound: 4.0 * (formula_variance / tf).sqrt(),
    }
}

/// Deterministic test vectors in `[-1, 1]` for the lemma verifier.
pub fn lemma_vectors(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let draw = |tag: u64, i: usize| {
        let h = crate::hash::hash_words(&[tag, i as u64], seed);
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let x = (0..n).map(|i| draw(1, i)).collect();
    let y = (0..n).map(|i| draw(2, i)).collect();
    (x, y)
}

/// Per-output-unit hashed accumulation of the inputs for a single-hash
/// layer: bucket `k` sums `sign(i,j) * a_j` over `j` with `h(i,j) == k`.
pub fn phi1_feature(layer: &VirtualLayer, i: usize, a: &[f64]) -> HashedFeature {
    let pair = layer.family().pair(0);
    feature_hash(a, |j| pair.index(i, j), |j| pair.sign(i, j), layer.bucket_count())
}

/// Single-hash layer forward as inner products `z_i = w . phi_i(a) + b_i`.
///
/// Exactly equals the layer's own forward pass (different summation order).
pub fn phi1_reformulation(layer: &VirtualLayer, a: &[f64]) -> Result<Vec<f64>> {
    if layer.mode() != LayerMode::HashedNets {
        return Err(Error::Config("phi1 reformulation needs a hashednets layer".into()));
    }
    if a.len() != layer.d_in() {
        return Err(Error::DimensionMismatch {
            what: "phi1 input",
            expected: layer.d_in(),
            got: a.len(),
        });
    }
    let w = layer.w();
    let z = (0..layer.d_out())
        .map(|i| {
            let phi = phi1_feature(layer, i, a);
            let dot: f64 = w.iter().zip(&phi.values).map(|(wk, pk)| wk * pk).sum();
            layer.bias()[i] + dot
        })
        .collect();
    Ok(z)
}

/// Multi-hash layer forward as one big inner product per output unit.
///
/// Sign hashing doubles each axis: digit `m in [0, 2K)` stands for the
/// signed value `+w[m]` or `-w[m - K]`, so the enumerated vector has
/// `(2K)^U` entries indexed in mixed radix. `g_alpha` holds the
/// reconstruction of every signed bucket tuple, `phi_i` accumulates `a_j`
/// into the tuple entry `j` actually hashes to, and their dot product
/// reproduces `z_i - b_i` exactly.
pub fn phi2_reformulation(layer: &VirtualLayer, a: &[f64], cap: usize) -> Result<Vec<f64>> {
    if layer.mode() != LayerMode::FunHash {
        return Err(Error::Config("phi2 reformulation needs a funhash layer".into()));
    }
    if a.len() != layer.d_in() {
        return Err(Error::DimensionMismatch {
            what: "phi2 input",
            expected: layer.d_in(),
            got: a.len(),
        });
    }
    let k = layer.bucket_count();
    let u = layer.num_hashes();
    let plain_bins = k
        .checked_pow(u as u32)
        .ok_or(Error::EnumerationCap { needed: usize::MAX, cap })?;
    if plain_bins > cap {
        return Err(Error::EnumerationCap { needed: plain_bins, cap });
    }
    let radix = 2 * k;
    let bins = radix.pow(u as u32);

    let g_alpha = enumerate_reconstructions(layer, radix, bins);

    let mut z = Vec::with_capacity(layer.d_out());
    let mut idx = vec![0u32; u];
    let mut sgn = vec![0.0; u];
    for i in 0..layer.d_out() {
        let mut phi = vec![0.0; bins];
        for (j, &aj) in a.iter().enumerate() {
            layer.family().lookup_into(i, j, &mut idx, &mut sgn);
            let mut bin = 0usize;
            let mut stride = 1usize;
            for uu in 0..u {
                let digit = idx[uu] as usize + if sgn[uu] < 0.0 { k } else { 0 };
                bin += digit * stride;
                stride *= radix;
            }
            phi[bin] += aj;
        }
        let dot: f64 = g_alpha.values.iter().zip(&phi).map(|(g, p)| g * p).sum();
        z.push(layer.bias()[i] + dot);
    }
    Ok(z)
}

/// `g` applied to every signed bucket tuple, mixed-radix indexed.
fn enumerate_reconstructions(layer: &VirtualLayer, radix: usize, bins: usize) -> HashedFeature {
    let k = layer.bucket_count();
    let u = layer.num_hashes();
    let w = layer.w();
    let recon = layer.recon().unwrap();
    let mut ws = ReconWorkspace::for_net(recon);
    let mut x = vec![0.0; u];
    let mut values = Vec::with_capacity(bins);
    for bin in 0..bins {
        let mut rest = bin;
        for slot in x.iter_mut() {
            let digit = rest % radix;
            rest /= radix;
            *slot = if digit < k { w[digit] } else { -w[digit - k] };
        }
        values.push(recon.forward(&x, &mut ws));
    }
    HashedFeature { buckets: radix, values }
}
