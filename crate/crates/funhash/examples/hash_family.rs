//! Seeded hash families: bucket uniformity, sign balance, and the
//! precomputed cache agreeing with online evaluation.

use funhash::hash::{HashCache, HashFamily, HashPair};

fn main() {
    let samples = 100_000usize;

    println!("bucket uniformity (chi-square vs K-1 degrees of freedom)");
    for k in [2usize, 16, 256] {
        let pair = HashPair::new(0xFEED, 0, k).unwrap();
        let mut counts = vec![0u64; k];
        for e in 0..samples {
            counts[pair.index(e / 317, e % 317)] += 1;
        }
        let expected = samples as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        println!("  K={k:<4} chi2={chi2:8.2}  (df={})", k - 1);
    }

    let pair = HashPair::new(0xFEED, 1, 8).unwrap();
    let mean: f64 = (0..samples).map(|e| pair.sign(e / 317, e % 317)).sum::<f64>() / samples as f64;
    println!("\nsign balance over {samples} entries: mean = {mean:+.5}");

    let family = HashFamily::new(0xFEED, 4, 32).unwrap();
    let cache = HashCache::build(&family, 64, 64).unwrap();
    let u = family.len();
    let mut agree = 0usize;
    let mut ci = vec![0u32; u];
    let mut cs = vec![0f64; u];
    let mut oi = vec![0u32; u];
    let mut os = vec![0f64; u];
    for i in 0..64 {
        for j in 0..64 {
            cache.lookup_into(i, j, &mut ci, &mut cs);
            family.lookup_into(i, j, &mut oi, &mut os);
            if ci == oi && cs == os {
                agree += 1;
            }
        }
    }
    println!("\ncache vs online on a 64x64 grid: {agree}/{} entries agree", 64 * 64);
}
