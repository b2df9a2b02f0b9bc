//! Experiment orchestration: building networks from a configuration,
//! running single experiments, and sweeping compression ratios in the
//! fixed-virtual and fixed-memory regimes.

use crate::config::{DatasetSpec, ExperimentConfig, ModeSpec, SweepRegime};
use crate::data::{self, Dataset, MnistSplit};
use crate::error::{Error, Result};
use crate::hash::hash_words;
use crate::network::{DenseLayer, Layer, LossHead, Network};
use crate::trainer::{self, TrainLog};
use crate::vlayer::VirtualLayer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

/// Hash caches are precomputed up to this size per layer.
const CACHE_LIMIT_BYTES: usize = 64 << 20;

/// One fully resolved run: a single (ratio, mode, seed) cell.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: ExperimentConfig,
    pub mode: ModeSpec,
    pub ratio: f64,
    pub seed: u64,
    /// Hidden width after regime adjustment.
    pub hidden: usize,
    /// Stored vector size per weight layer (ignored for dense).
    pub layer_k: Vec<usize>,
}

/// Result row of one run; the CSV schema is
/// `mode,ratio,U,G,dual,hops,seed,stored_params,virtual_params,epochs,test_error_pct,train_error_pct`.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: String,
    pub ratio: f64,
    pub num_hashes: usize,
    pub recon_depth: usize,
    pub dual: bool,
    pub hops: usize,
    pub seed: u64,
    pub stored_params: usize,
    pub virtual_params: usize,
    pub epochs: usize,
    pub test_error_pct: f64,
    pub train_error_pct: f64,
    pub log: TrainLog,
}

pub const RESULT_CSV_HEADER: &str =
    "mode,ratio,U,G,dual,hops,seed,stored_params,virtual_params,epochs,test_error_pct,train_error_pct";

impl RunResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.ratio,
            self.num_hashes,
            self.recon_depth,
            self.dual,
            self.hops,
            self.seed,
            self.stored_params,
            self.virtual_params,
            self.epochs,
            self.test_error_pct,
            self.train_error_pct
        )
    }
}

/// Render result rows as a CSV table with the fixed header.
pub fn results_to_csv(rows: &[RunResult]) -> String {
    let mut out = String::from(RESULT_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Render a per-epoch training log as CSV. Wall time stays out of the
/// file so reruns are byte-identical.
pub fn log_to_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,train_loss,train_error_pct,test_error_pct\n");
    for row in &log.rows {
        let test = row
            .test_error_pct
            .map_or(String::new(), |v| v.to_string());
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.train_error_pct, test
        ));
    }
    out
}

/// Layer widths of the configured topology: depth 3 is one hidden layer,
/// depth 5 is three.
pub fn topology(input_dim: usize, hidden: usize, classes: usize, depth: usize) -> Vec<usize> {
    match depth {
        3 => vec![input_dim, hidden, classes],
        5 => vec![input_dim, hidden, hidden, hidden, classes],
        _ => unreachable!("validated depth"),
    }
}

/// Resolve the dataset named by the config into train and test splits.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match &cfg.dataset {
        DatasetSpec::Mnist => {
            let dir = cfg
                .data_dir
                .as_ref()
                .map(PathBuf::from)
                .unwrap_or_else(data::default_data_dir);
            let train = data::load_mnist(&dir, MnistSplit::Train)?;
            let test = data::load_mnist(&dir, MnistSplit::Test)?;
            (train, test)
        }
        DatasetSpec::Synthetic { kind, n } => {
            let all = data::make_synthetic(*kind, *n, 0x5EED)?;
            // carve a fifth off for testing
            let (train, test) = data::split(&all, 0.2, 0x5EED)?;
            (train, test)
        }
    };
    if cfg.train_limit > 0 {
        train = train.take(cfg.train_limit);
    }
    if cfg.test_limit > 0 {
        test = test.take(cfg.test_limit);
    }
    Ok((train, test))
}

/// Stored-vector sizes for each weight layer at the given ratio.
fn layer_ks(widths: &[usize], ratio: f64) -> Vec<usize> {
    widths
        .windows(2)
        .map(|w| (((w[0] * w[1]) as f64 * ratio).round() as usize).max(1))
        .collect()
}

/// Expand one experiment config into the runs of its sweep grid, in config
/// order: ratios outermost, then modes, then seeds.
pub fn sweep_specs(cfg: &ExperimentConfig, input_dim: usize, classes: usize) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &ratio in &cfg.ratios {
        for &mode in &cfg.modes {
            for &seed in &cfg.seeds {
                specs.push(resolve_spec(cfg, mode, ratio, seed, input_dim, classes));
            }
        }
    }
    specs
}

/// Resolve regime-dependent sizes for one (mode, ratio, seed) cell.
pub fn resolve_spec(
    cfg: &ExperimentConfig,
    mode: ModeSpec,
    ratio: f64,
    seed: u64,
    input_dim: usize,
    classes: usize,
) -> RunSpec {
    match cfg.regime {
        SweepRegime::FixedVirtual => {
            let widths = topology(input_dim, cfg.hidden, classes, cfg.depth);
            RunSpec {
                config: cfg.clone(),
                mode,
                ratio,
                seed,
                hidden: cfg.hidden,
                layer_k: layer_ks(&widths, ratio),
            }
        }
        SweepRegime::FixedMemory => {
            // the virtual net grows while every stored vector keeps its
            // ratio-1 size
            let expansion = (1.0 / ratio).round() as usize;
            let hidden = cfg.hidden * expansion.max(1);
            let base = topology(input_dim, cfg.hidden, classes, cfg.depth);
            RunSpec {
                config: cfg.clone(),
                mode,
                ratio,
                seed,
                hidden,
                layer_k: layer_ks(&base, 1.0),
            }
        }
    }
}

/// Build the network for one run. Hash layouts derive only from the run
/// seed and layer index, so modes sharing a seed share layouts; init noise
/// comes from an independently derived stream.
pub fn build_network(spec: &RunSpec, input_dim: usize, classes: usize) -> Result<Network> {
    let cfg = &spec.config;
    let widths = topology(input_dim, spec.hidden, classes, cfg.depth);
    let init_seed = hash_words(&[0x696E6974], spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (l, pair) in widths.windows(2).enumerate() {
        let (d_in, d_out) = (pair[0], pair[1]);
        let last = l + 2 == widths.len();
        let compress = !matches!(spec.mode, ModeSpec::Dense) && (!last || cfg.compress_output);
        if !compress {
            layers.push(Layer::Dense(DenseLayer::new(d_in, d_out, &mut rng)));
            continue;
        }
        let k = spec.layer_k[l];
        let hash_seed = hash_words(&[0x6C617965, l as u64], spec.seed);
        let u = cfg.num_hashes;
        let g = cfg.recon_depth;
        let mut layer = match spec.mode {
            ModeSpec::HashedNets => VirtualLayer::hashednets(d_in, d_out, k, hash_seed, &mut rng)?,
            ModeSpec::FunHash => VirtualLayer::funhash(d_in, d_out, k, u, g, hash_seed, &mut rng)?,
            ModeSpec::FunHashDual => {
                let slots = crate::recon::ReconNet::new(u, g)?.param_count();
                let k_prime = if cfg.k_prime > 0 { cfg.k_prime } else { slots };
                VirtualLayer::funhash_dual(d_in, d_out, k, u, g, k_prime, hash_seed, &mut rng)?
            }
            ModeSpec::MultiHop => {
                let mut chain = Vec::with_capacity(cfg.hops);
                let mut size = k;
                for _ in 0..cfg.hops {
                    size = (size / cfg.hop_shrink).max(1);
                    chain.push(size);
                }
                VirtualLayer::multihop(
                    d_in, d_out, k, u, g, &chain, cfg.hop_u, cfg.hop_g, hash_seed, &mut rng,
                )?
            }
            ModeSpec::Dense => unreachable!(),
        };
        if let Some(r) = layer.recon() {
            if r.param_count() >= k {
                return Err(Error::Config(format!(
                    "layer {l}: reconstruction parameters ({}) must stay below K ({k})",
                    r.param_count()
                )));
            }
        }
        let cache_bytes = d_in * d_out * layer.num_hashes() * 5;
        if cache_bytes <= CACHE_LIMIT_BYTES {
            layer = layer.with_cached_hashes()?;
        }
        layers.push(Layer::Virtual(layer));
    }
    Network::new(layers, LossHead::SoftmaxCrossEntropy)
}

/// Train one resolved run and summarize it as a result row.
pub fn run_experiment(spec: &RunSpec, train: &Dataset, test: &Dataset) -> Result<RunResult> {
    let mut net = build_network(spec, train.dim(), train.classes)?;
    let train_cfg = spec.config.train_config_for_seed(spec.seed);
    let log = trainer::train(&mut net, train, Some(test), &train_cfg)?;
    run_result_summary(spec, &net, &log, test, train)
}

/// Summarize an already trained network as a result row.
pub fn run_result_summary(
    spec: &RunSpec,
    net: &Network,
    log: &TrainLog,
    test: &Dataset,
    train: &Dataset,
) -> Result<RunResult> {
    let final_eval = trainer::evaluate(net, test)?;
    let train_eval = trainer::evaluate(net, train)?;
    Ok(RunResult {
        mode: spec.mode.as_str().to_string(),
        ratio: spec.ratio,
        num_hashes: match spec.mode {
            ModeSpec::Dense => 0,
            ModeSpec::HashedNets => 1,
            _ => spec.config.num_hashes,
        },
        recon_depth: match spec.mode {
            ModeSpec::Dense | ModeSpec::HashedNets => 0,
            _ => spec.config.recon_depth,
        },
        dual: matches!(spec.mode, ModeSpec::FunHashDual),
        hops: if matches!(spec.mode, ModeSpec::MultiHop) { spec.config.hops } else { 0 },
        seed: spec.seed,
        stored_params: net.stored_params(),
        virtual_params: net.virtual_params(),
        epochs: spec.config.train.epochs,
        test_error_pct: final_eval.error_pct,
        train_error_pct: train_eval.error_pct,
        log: log.clone(),
    })
}

/// Run every cell of the sweep grid, `jobs` runs at a time. Failed runs are
/// reported on stderr and skipped; the row order always follows the grid.
pub fn sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<RunResult>> {
    let (train, test) = load_dataset(cfg)?;
    let specs = sweep_specs(cfg, train.dim(), train.classes);
    let results = run_specs(&specs, &train, &test, jobs);
    Ok(results
        .into_iter()
        .filter_map(|r| match r {
            Ok(row) => Some(row),
            Err((spec, err)) => {
                eprintln!(
                    "sweep: run (mode={}, ratio={}, seed={}) failed: {err}",
                    spec.mode.as_str(),
                    spec.ratio,
                    spec.seed
                );
                None
            }
        })
        .collect())
}

type RunOutcome = std::result::Result<RunResult, (RunSpec, Error)>;

/// Execute resolved runs, preserving input order in the output.
pub fn run_specs(specs: &[RunSpec], train: &Dataset, test: &Dataset, jobs: usize) -> Vec<RunOutcome> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        specs
            .par_iter()
            .map(|spec| run_experiment(spec, train, test).map_err(|e| (spec.clone(), e)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticKind;

    fn synthetic_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic { kind: SyntheticKind::Blobs, n: 200 },
            hidden: 8,
            depth: 3,
            ratio: 0.5,
            num_hashes: 2,
            recon_depth: 2,
            seeds: vec![1],
            ratios: vec![1.0, 0.25],
            modes: vec![ModeSpec::HashedNets, ModeSpec::FunHash],
            train: crate::trainer::TrainConfig {
                epochs: 2,
                batch_size: 32,
                eval_every: 0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn fixed_virtual_scales_k_with_ratio() {
        let cfg = synthetic_config();
        let spec = resolve_spec(&cfg, ModeSpec::FunHash, 0.25, 1, 2, 2);
        assert_eq!(spec.hidden, 8);
        assert_eq!(spec.layer_k, vec![4, 4]); // 2*8/4, 8*2/4
    }

    #[test]
    fn fixed_memory_grows_virtual_at_constant_k() {
        let mut cfg = synthetic_config();
        cfg.regime = SweepRegime::FixedMemory;
        let base = resolve_spec(&cfg, ModeSpec::FunHash, 1.0, 1, 2, 2);
        let grown = resolve_spec(&cfg, ModeSpec::FunHash, 0.25, 1, 2, 2);
        assert_eq!(base.hidden, 8);
        assert_eq!(grown.hidden, 32);
        assert_eq!(base.layer_k, grown.layer_k);
    }

    #[test]
    fn sweep_grid_order_and_size() {
        let cfg = synthetic_config();
        let specs = sweep_specs(&cfg, 2, 2);
        assert_eq!(specs.len(), 2 * 2 * 1);
        assert_eq!(specs[0].ratio, 1.0);
        assert_eq!(specs[0].mode, ModeSpec::HashedNets);
        assert_eq!(specs[1].mode, ModeSpec::FunHash);
        assert_eq!(specs[2].ratio, 0.25);
    }

    #[test]
    fn empty_grid_gives_header_only_csv() {
        let mut cfg = synthetic_config();
        cfg.ratios.clear();
        let specs = sweep_specs(&cfg, 2, 2);
        assert!(specs.is_empty());
        let csv = results_to_csv(&[]);
        assert_eq!(csv, format!("{RESULT_CSV_HEADER}\n"));
    }

    #[test]
    fn accounting_column_matches_network() {
        let cfg = synthetic_config();
        let (train, test) = load_dataset(&cfg).unwrap();
        let spec = resolve_spec(&cfg, ModeSpec::FunHash, 0.5, 7, train.dim(), train.classes);
        let row = run_experiment(&spec, &train, &test).unwrap();
        let net = build_network(&spec, train.dim(), train.classes).unwrap();
        assert_eq!(row.stored_params, net.stored_params());
        assert_eq!(row.virtual_params, 2 * 8 + 8 * 2);
    }

    #[test]
    fn sweep_runs_all_cells_in_order() {
        let cfg = synthetic_config();
        let rows = sweep(&cfg, 2).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = results_to_csv(&rows);
        assert!(csv.starts_with(RESULT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
        // grid order preserved
        assert_eq!(rows[0].mode, "hashednets");
        assert_eq!(rows[0].ratio, 1.0);
        assert_eq!(rows[3].mode, "funhash");
        assert_eq!(rows[3].ratio, 0.25);
    }

    #[test]
    fn rerun_rows_are_identical(){
        let cfg = synthetic_config();
        let a = results_to_csv(&sweep(&cfg, 2).unwrap());
        let b = results_to_csv(&sweep(&cfg, 1).unwrap());
        assert_eq!(a, b);
    }
}
