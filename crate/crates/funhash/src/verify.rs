//! Self-check suites behind `funhash verify`: each returns a list of
//! pass/fail lines suitable for machine parsing.

use crate::hash::{HashCache, HashFamily, HashPair};
use crate::kernel::{phi1_reformulation, phi2_reformulation, verify_lemma, DEFAULT_ENUM_CAP};
use crate::vlayer::VirtualLayer;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(suite: &'static str, name: impl Into<String>, pass: bool, detail: String) -> Check {
    Check { suite, name: name.into(), pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff < 1e-12 {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// chi2(df) 0.999 quantiles for df = K - 1 (scipy.stats.chi2.ppf).
fn chi2_quantile_999(df: usize) -> f64 {
    match df {
        1 => 10.8276,
        15 => 37.6973,
        255 => 330.5197,
        _ => panic!("no tabulated quantile for df {df}"),
    }
}

pub fn hashes() -> Vec<Check> {
    let mut out = Vec::new();
    let n = 100_000usize;

    for k in [2usize, 16, 256] {
        let pair = HashPair::new(0xA11CE, 1, k).unwrap();
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
        let bound = chi2_quantile_999(k - 1);
        out.push(check(
            "hashes",
            format!("uniformity_k{k}"),
            chi2 < bound,
            format!("chi2={chi2:.2} bound={bound}"),
        ));
    }

    let pair = HashPair::new(0x5153, 0, 8).unwrap();
    let mut sum = 0.0;
    for e in 0..n {
        sum += pair.sign(e / 317, e % 317);
    }
    let mean = sum / n as f64;
    let bound = 3.0 / (n as f64).sqrt();
    out.push(check(
        "hashes",
        "sign_balance",
        mean.abs() < bound,
        format!("mean={mean:.5} bound={bound:.5}"),
    ));

    let family = HashFamily::new(0xFA111, 4, 64).unwrap();
    let mut worst: f64 = 0.0;
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
            worst = worst.max((cov / (vx * vy).sqrt()).abs());
        }
    }
    out.push(check(
        "hashes",
        "pair_independence",
        worst < 0.01,
        format!("max|corr|={worst:.5}"),
    ));

    let family = HashFamily::new(0xCAFE, 4, 16).unwrap();
    let cache = HashCache::build(&family, 32, 32).unwrap();
    let u = family.len();
    let mut agree = true;
    let mut ci = vec![0u32; u];
    let mut cs = vec![0f64; u];
    let mut oi = vec![0u32; u];
    let mut os = vec![0f64; u];
    for i in 0..32 {
        for j in 0..32 {
            cache.lookup_into(i, j, &mut ci, &mut cs);
            family.lookup_into(i, j, &mut oi, &mut os);
            agree &= ci == oi && cs == os;
        }
    }
    out.push(check("hashes", "cache_online_equality", agree, "exhaustive 32x32xU4".into()));
    out
}

pub fn lemma() -> Vec<Check> {
    let mut out = Vec::new();
    let trials = 100_000usize;
    for n in [4usize, 8, 16] {
        for k in [2usize, 4, 8] {
            let report = verify_lemma(n, k, trials, 0xBEEF + (n * 31 + k) as u64);
            out.push(check(
                "lemma",
                format!("bias_n{n}_k{k}"),
                report.bias_ok(),
                format!("bias={:.5} bound={:.5}", report.bias, report.bias_bound),
            ));
            out.push(check(
                "lemma",
                format!("variance_n{n}_k{k}"),
                report.variance_ok(0.10),
                format!(
                    "empirical={:.5} formula={:.5}",
                    report.empirical_variance, report.formula_variance
                ),
            ));
        }
    }
    // doubling K halves the variance
    let r1 = verify_lemma(8, 4, trials, 0xF00D);
    let r2 = verify_lemma(8, 8, trials, 0xF00D);
    let ratio = r1.empirical_variance / r2.empirical_variance;
    out.push(check(
        "lemma",
        "variance_halves_k4_to_k8",
        (1.8..=2.2).contains(&ratio),
        format!("ratio={ratio:.3}"),
    ));
    out
}

pub fn oracles() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);

    for (d_in, d_out, k) in [(4usize, 4usize, 3usize), (6, 5, 4)] {
        let layer = VirtualLayer::hashednets(d_in, d_out, k, rng.gen(), &mut rng).unwrap();
        let a: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_vec((1, d_in), a.clone()).unwrap();
        let z_layer = layer.forward(&x).unwrap().0.row(0).to_vec();
        let z_phi = phi1_reformulation(&layer, &a).unwrap();
        let worst = z_layer
            .iter()
            .zip(&z_phi)
            .map(|(x, y)| rel_err(*x, *y))
            .fold(0.0, f64::max);
        out.push(check(
            "oracles",
            format!("phi1_{d_out}x{d_in}_k{k}"),
            worst < 1e-12,
            format!("max_rel_err={worst:.2e}"),
        ));
    }

    for (k, u) in [(2usize, 2usize), (3, 2), (2, 4), (8, 1)] {
        let layer = VirtualLayer::funhash(4, 4, k, u, 3, rng.gen(), &mut rng).unwrap();
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_vec((1, 4), a.clone()).unwrap();
        let z_layer = layer.forward(&x).unwrap().0.row(0).to_vec();
        let z_phi = phi2_reformulation(&layer, &a, DEFAULT_ENUM_CAP).unwrap();
        let worst = z_layer
            .iter()
            .zip(&z_phi)
            .map(|(x, y)| rel_err(*x, *y))
            .fold(0.0, f64::max);
        out.push(check(
            "oracles",
            format!("phi2_k{k}_u{u}"),
            worst < 1e-12,
            format!("max_rel_err={worst:.2e}"),
        ));
    }

    // value capacity census
    let census = |v: &Array2<f64>| {
        let mut seen: Vec<u64> = v.iter().map(|f| f.to_bits()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    };
    let (k, u) = (2usize, 2usize);
    let fun = VirtualLayer::funhash(32, 32, k, u, 3, 0xCE1, &mut rng).unwrap();
    let n_fun = census(&fun.materialize_matrix().unwrap());
    let hashed = VirtualLayer::hashednets(32, 32, k, 0xCE2, &mut rng).unwrap();
    let n_hash = census(&hashed.materialize_matrix().unwrap());
    out.push(check(
        "oracles",
        "capacity_census",
        n_fun <= (2 * k).pow(u as u32) && n_hash <= 2 * k && n_fun > 2 * k,
        format!("funhash={n_fun} (cap {}), hashednets={n_hash} (cap {})", (2 * k).pow(u as u32), 2 * k),
    ));
    out
}

pub fn gradients() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9A4D);
    let layers: Vec<(String, VirtualLayer)> = vec![
        (
            "hashednets".into(),
            VirtualLayer::hashednets(5, 4, 6, 401, &mut rng).unwrap(),
        ),
        (
            "funhash_u2_g2".into(),
            VirtualLayer::funhash(5, 5, 6, 2, 2, 402, &mut rng).unwrap(),
        ),
        (
            "funhash_u4_g3".into(),
            VirtualLayer::funhash(6, 5, 8, 4, 3, 403, &mut rng).unwrap(),
        ),
        (
            "funhash_dual".into(),
            VirtualLayer::funhash_dual(4, 4, 4, 2, 3, 4, 404, &mut rng).unwrap(),
        ),
        (
            "multihop_m1".into(),
            VirtualLayer::multihop(4, 4, 8, 2, 2, &[4], 2, 2, 405, &mut rng).unwrap(),
        ),
    ];
    for (name, layer) in layers {
        let (worst, count) = finite_difference_worst(&layer, &mut rng);
        out.push(check(
            "gradients",
            name,
            worst < 1e-5,
            format!("max_rel_err={worst:.2e} over {count} scalars"),
        ));
    }
    out
}

/// Worst relative error between analytic and central-difference gradients
/// over every trainable scalar of the layer.
pub fn finite_difference_worst(layer: &VirtualLayer, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let (d_in, d_out) = layer.dims();
    let batch = 2usize;
    let a = Array2::from_shape_fn((batch, d_in), |_| rng.gen_range(-1.0..1.0));
    let coeff = Array2::from_shape_fn((batch, d_out), |_| rng.gen_range(-1.0..1.0));
    let loss = |l: &VirtualLayer| -> f64 {
        let (z, _) = l.forward(&a).unwrap();
        (&z * &coeff).sum()
    };
    let (_, scratch) = layer.forward(&a).unwrap();
    let grad = layer.backward(&a, &coeff, &scratch).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0usize;

    let mut probe = |analytic: f64, perturb: &dyn Fn(&mut VirtualLayer, f64)| {
        let mut lp = layer.clone();
        perturb(&mut lp, h);
        let mut lm = layer.clone();
        perturb(&mut lm, -h);
        let fd = (loss(&lp) - loss(&lm)) / (2.0 * h);
        let diff = (analytic - fd).abs();
        let err = if diff < 1e-10 { 0.0 } else { diff / analytic.abs().max(fd.abs()) };
        worst = worst.max(err);
        count += 1;
    };

    for k in 0..layer.w().len() {
        probe(grad.d_w[k], &move |l, eps| l.w_mut()[k] += eps);
    }
    for k in 0..grad.d_alpha.len() {
        probe(grad.d_alpha[k], &move |l, eps| {
            l.recon_mut().unwrap().params_mut()[k] += eps
        });
    }
    for k in 0..layer.bias().len() {
        probe(grad.d_b[k], &move |l, eps| l.bias_mut()[k] += eps);
    }
    for k in 0..grad.d_w_prime.len() {
        probe(grad.d_w_prime[k], &move |l, eps| {
            l.dual_w_prime_mut().unwrap()[k] += eps
        });
    }
    for (m, hop_grad) in grad.d_hop_alphas.iter().enumerate() {
        for k in 0..hop_grad.len() {
            probe(hop_grad[k], &move |l, eps| l.hop_recon_params_mut(m)[k] += eps);
        }
    }
    (worst, count)
}
