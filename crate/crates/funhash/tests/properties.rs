//! Property tests over randomly drawn instances.

use funhash::config::ExperimentConfig;
use funhash::data::{make_synthetic, split, SyntheticKind};
use funhash::hash::{HashCache, HashFamily, HashPair};
use funhash::recon::ReconNet;
use funhash::vlayer::VirtualLayer;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // pure function of (seed, u, i, j), with outputs in range
    #[test]
    fn hash_pair_is_pure_and_in_range(
        seed in any::<u64>(),
        u in 0usize..16,
        k in 1usize..512,
        i in 0usize..10_000,
        j in 0usize..10_000,
    ) {
        let pair = HashPair::new(seed, u, k).unwrap();
        let idx = pair.index(i, j);
        let sgn = pair.sign(i, j);
        prop_assert!(idx < k);
        prop_assert!(sgn == 1.0 || sgn == -1.0);
        prop_assert_eq!(idx, pair.index(i, j));
        prop_assert_eq!(sgn, pair.sign(i, j));
    }

    // precomputed hashes equal online evaluation everywhere
    #[test]
    fn cache_agrees_with_online(
        seed in any::<u64>(),
        u in 1usize..6,
        k in 1usize..64,
        d_out in 1usize..12,
        d_in in 1usize..12,
    ) {
        let family = HashFamily::new(seed, u, k).unwrap();
        let cache = HashCache::build(&family, d_out, d_in).unwrap();
        let mut ci = vec![0u32; u];
        let mut cs = vec![0f64; u];
        let mut oi = vec![0u32; u];
        let mut os = vec![0f64; u];
        for i in 0..d_out {
            for j in 0..d_in {
                cache.lookup_into(i, j, &mut ci, &mut cs);
                family.lookup_into(i, j, &mut oi, &mut os);
                prop_assert_eq!(&ci, &oi);
                prop_assert_eq!(&cs, &os);
            }
        }
    }

    // batched reconstruction equals the per-row scalar path bit for bit
    #[test]
    fn recon_batch_equals_rows(
        seed in any::<u64>(),
        u in 1usize..9,
        g in 2usize..5,
        rows in 0usize..20,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ReconNet::with_init(u, g, &mut rng).unwrap();
        let flat: Vec<f64> = (0..rows * u).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch = net.batch_forward(&flat);
        prop_assert_eq!(batch.len(), rows);
        for (r, row) in flat.chunks_exact(u).enumerate() {
            prop_assert_eq!(batch[r].to_bits(), net.eval(row).to_bits());
        }
    }

    // virtual growth at fixed K stores nothing new besides the bias
    #[test]
    fn virtuality_invariant(
        seed in any::<u64>(),
        k in 20usize..50,
        scale in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small = VirtualLayer::funhash(8, 6, k, 2, 2, seed, &mut rng).unwrap();
        let large = VirtualLayer::funhash(8 * scale, 6 * scale, k, 2, 2, seed, &mut rng).unwrap();
        prop_assert_eq!(
            small.stored_params() - small.bias().len(),
            large.stored_params() - large.bias().len()
        );
    }

    // split partitions the dataset for any fraction and seed
    #[test]
    fn split_partitions(
        n in 10usize..200,
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let ds = make_synthetic(SyntheticKind::Xor, n, 3).unwrap();
        let (train, val) = split(&ds, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), n);
        let expected_val = ((n as f64) * fraction).round() as usize;
        prop_assert_eq!(val.len(), expected_val);
    }

    // parse(to_text(cfg)) == cfg over a slice of the config space
    #[test]
    fn config_round_trip(
        hidden in 1usize..500,
        ratio_den in 1usize..64,
        u in 1usize..17,
        g in 2usize..5,
        lr in 0.0001f64..1.0,
        epochs in 0usize..50,
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.hidden = hidden;
        cfg.ratio = 1.0 / ratio_den as f64;
        cfg.num_hashes = u;
        cfg.recon_depth = g;
        cfg.train.learning_rate = lr;
        cfg.train.epochs = epochs;
        let parsed = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(parsed, cfg);
    }
}

// streamed and materialized forward stay within 1e-12 relative of each
// other on random layers
proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn streamed_matches_materialized(
        seed in any::<u64>(),
        d_in in 2usize..10,
        d_out in 2usize..10,
        k in 2usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = VirtualLayer::funhash(d_in, d_out, k, 2, 3, seed, &mut rng).unwrap();
        let streamed = layer.clone().with_scratch_budget(1);
        let a = Array2::from_shape_fn((3, d_in), |_| rng.gen_range(-1.0..1.0));
        let (z1, _) = layer.forward(&a).unwrap();
        let (z2, _) = streamed.forward(&a).unwrap();
        for (x, y) in z1.iter().zip(z2.iter()) {
            let diff = (x - y).abs();
            prop_assert!(diff <= 1e-12 * x.abs().max(y.abs()).max(1e-300) || diff == 0.0);
        }
    }
}
