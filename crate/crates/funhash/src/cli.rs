//! The `funhash` command line: `train`, `sweep`, and `verify`.
//!
//! Exit codes: 0 on success, 2 for configuration and missing-input
//! problems, 1 for runtime failures (including any failed verify check).
//! The dataset root comes from `FUNHASH_DATA_DIR` (default `./data`).

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::experiment::{self, log_to_csv, results_to_csv};
use crate::{checkpoint, verify};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "funhash",
    about = "Compressed fully-connected networks: hashed weight sharing with a trained reconstruction network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a config file; writes a per-epoch CSV log and a
    /// checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `out` joined with its name).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the ratio x mode x seed grid of a config; writes `results.csv`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a self-check suite and report one line per check.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Also write the report CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
pub enum Suite {
    /// Hash uniformity, sign balance, pair independence, cache equality.
    Hashes,
    /// Hash-kernel bias and variance against the closed form.
    Lemma,
    /// Inner-product reformulations and capacity census.
    Oracles,
    /// Finite-difference gradient checks in every layer mode.
    Gradients,
    /// Everything above.
    All,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_)
                | Error::ConfigParse { .. }
                | Error::Io(_)
                | Error::IdxBadMagic { .. }
                | Error::IdxTruncated { .. }
                | Error::IdxCountMismatch { .. }
                | Error::LabelOutOfRange { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> crate::Result<i32> {
    match cli.command {
        Command::Train { config, out, seed } => cmd_train(&config, out, seed),
        Command::Sweep { config, out, jobs, seed } => cmd_sweep(&config, out, jobs, seed),
        Command::Verify { suite, out } => cmd_verify(suite, out),
    }
}

fn resolve_out(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join(&cfg.name))
}

fn cmd_train(config: &PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> crate::Result<i32> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out_dir = resolve_out(&cfg, out);
    std::fs::create_dir_all(&out_dir)?;

    let (train_set, test_set) = experiment::load_dataset(&cfg)?;
    let run_seed = cfg.seeds[0];
    let spec = experiment::resolve_spec(
        &cfg,
        cfg.mode,
        cfg.ratio,
        run_seed,
        train_set.dim(),
        train_set.classes,
    );
    let mut net = experiment::build_network(&spec, train_set.dim(), train_set.classes)?;
    eprintln!(
        "training {} mode={} ratio={} seed={} stored={} virtual={}",
        cfg.name,
        cfg.mode.as_str(),
        cfg.ratio,
        run_seed,
        net.stored_params(),
        net.virtual_params()
    );
    let train_cfg = cfg.train_config_for_seed(run_seed);
    let log = crate::trainer::train(&mut net, &train_set, Some(&test_set), &train_cfg)?;
    for row in &log.rows {
        eprintln!(
            "epoch {:>3}  loss {:.6}  train-err {:.2}%  test-err {}  ({:.1}s)",
            row.epoch,
            row.train_loss,
            row.train_error_pct,
            row.test_error_pct
                .map_or("-".into(), |v| format!("{v:.2}%")),
            row.wall_s
        );
    }

    std::fs::write(out_dir.join("log.csv"), log_to_csv(&log))?;
    checkpoint::save(&net, &out_dir.join("model.fhck"))?;
    let result = experiment::run_result_summary(&spec, &net, &log, &test_set, &train_set)?;
    std::fs::write(out_dir.join("result.csv"), results_to_csv(&[result]))?;
    eprintln!("artifacts written to {}", out_dir.display());
    Ok(0)
}

fn cmd_sweep(
    config: &PathBuf,
    out: Option<PathBuf>,
    jobs: usize,
    seed: Option<u64>,
) -> crate::Result<i32> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out_dir = resolve_out(&cfg, out);
    std::fs::create_dir_all(&out_dir)?;
    let rows = experiment::sweep(&cfg, jobs)?;
    let csv = results_to_csv(&rows);
    std::fs::write(out_dir.join("results.csv"), &csv)?;
    print!("{csv}");
    eprintln!("{} rows -> {}", rows.len(), out_dir.join("results.csv").display());
    Ok(0)
}

fn cmd_verify(suite: Suite, out: Option<PathBuf>) -> crate::Result<i32> {
    let checks = match suite {
        Suite::Hashes => verify::hashes(),
        Suite::Lemma => verify::lemma(),
        Suite::Oracles => verify::oracles(),
        Suite::Gradients => verify::gradients(),
        Suite::All => {
            let mut all = verify::hashes();
            all.extend(verify::lemma());
            all.extend(verify::oracles());
            all.extend(verify::gradients());
            all
        }
    };
    let mut csv = String::from("suite,check,status,detail\n");
    let mut failed = 0usize;
    for check in &checks {
        let status = if check.pass { "PASS" } else { "FAIL" };
        if !check.pass {
            failed += 1;
        }
        println!("{status} {}::{} {}", check.suite, check.name, check.detail);
        csv.push_str(&format!(
            "{},{},{},{}\n",
            check.suite,
            check.name,
            status,
            check.detail.replace(',', ";")
        ));
    }
    if let Some(path) = out {
        std::fs::write(path, csv)?;
    }
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", checks.len());
        Ok(1)
    } else {
        eprintln!("all {} checks passed", checks.len());
        Ok(0)
    }
}
