//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers. No quoting, no nesting; `#` starts a comment.
//! Parse -> serialize -> parse is the identity on every field.

use crate::data::SyntheticKind;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;
use crate::vlayer::LayerMode;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// MNIST IDX files from the data directory.
    Mnist,
    Synthetic { kind: SyntheticKind, n: usize },
}

impl DatasetSpec {
    pub fn kind_str(&self) -> &'static str {
        match self {
            DatasetSpec::Mnist => "mnist",
            DatasetSpec::Synthetic { kind, .. } => kind.as_str(),
        }
    }
}

/// Layer compression mode requested by a config; `Dense` is the
/// uncompressed baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSpec {
    Dense,
    HashedNets,
    FunHash,
    FunHashDual,
    MultiHop,
}

impl ModeSpec {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dense" => Some(Self::Dense),
            "hashednets" => Some(Self::HashedNets),
            "funhash" => Some(Self::FunHash),
            "funhash-dual" => Some(Self::FunHashDual),
            "multihop" => Some(Self::MultiHop),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::HashedNets => "hashednets",
            Self::FunHash => "funhash",
            Self::FunHashDual => "funhash-dual",
            Self::MultiHop => "multihop",
        }
    }

    pub fn layer_mode(&self) -> Option<LayerMode> {
        match self {
            Self::Dense => None,
            Self::HashedNets => Some(LayerMode::HashedNets),
            Self::FunHash => Some(LayerMode::FunHash),
            Self::FunHashDual => Some(LayerMode::FunHashDual),
            Self::MultiHop => Some(LayerMode::MultiHop),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepRegime {
    /// Shrink the stored vectors at a fixed virtual topology.
    FixedVirtual,
    /// Grow the virtual topology at fixed stored size.
    FixedMemory,
}

impl SweepRegime {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed-virtual" => Some(Self::FixedVirtual),
            "fixed-memory" => Some(Self::FixedMemory),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FixedVirtual => "fixed-virtual",
            Self::FixedMemory => "fixed-memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,

    pub dataset: DatasetSpec,
    pub data_dir: Option<String>,
    pub train_limit: usize,
    pub test_limit: usize,

    pub depth: usize,
    pub hidden: usize,
    pub mode: ModeSpec,
    pub ratio: f64,
    pub num_hashes: usize,
    pub recon_depth: usize,
    pub k_prime: usize,
    pub hops: usize,
    pub hop_shrink: usize,
    pub hop_u: usize,
    pub hop_g: usize,
    pub compress_output: bool,

    pub train: TrainConfig,

    pub regime: SweepRegime,
    pub ratios: Vec<f64>,
    pub modes: Vec<ModeSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![1],
            out_dir: "runs".into(),
            dataset: DatasetSpec::Mnist,
            data_dir: None,
            train_limit: 0,
            test_limit: 0,
            depth: 3,
            hidden: 200,
            mode: ModeSpec::FunHash,
            ratio: 0.125,
            num_hashes: 4,
            recon_depth: 3,
            k_prime: 0,
            hops: 0,
            hop_shrink: 2,
            hop_u: 2,
            hop_g: 2,
            compress_output: true,
            train: TrainConfig::default(),
            regime: SweepRegime::FixedVirtual,
            ratios: vec![1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
            modes: vec![ModeSpec::HashedNets, ModeSpec::FunHash],
        }
    }
}

fn parse_ratio(s: &str) -> Option<f64> {
    if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().ok()?;
        let den: f64 = den.trim().parse().ok()?;
        if den == 0.0 {
            return None;
        }
        Some(num / den)
    } else {
        s.trim().parse().ok()
    }
}

fn parse_list<T>(s: &str, mut item: impl FnMut(&str) -> Option<T>) -> Option<Vec<T>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|p| item(p.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ConfigParse { line: lineno + 1, message };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?;
                section = name.trim().to_string();
                match section.as_str() {
                    "experiment" | "dataset" | "model" | "train" | "sweep" => {}
                    other => return Err(err(format!("unknown section [{other}]"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| err(format!("invalid {what}: {value:?}"));

            match (section.as_str(), key) {
                ("experiment", "name") => cfg.name = value.to_string(),
                ("experiment", "seeds") => {
                    cfg.seeds = parse_list(value, |p| p.parse().ok())
                        .ok_or_else(|| bad("seed list"))?;
                }
                ("experiment", "out") => cfg.out_dir = value.to_string(),

                ("dataset", "kind") => {
                    cfg.dataset = match value {
                        "mnist" => DatasetSpec::Mnist,
                        other => match SyntheticKind::parse(other) {
                            Some(kind) => {
                                let n = match &cfg.dataset {
                                    DatasetSpec::Synthetic { n, .. } => *n,
                                    _ => 2000,
                                };
                                DatasetSpec::Synthetic { kind, n }
                            }
                            None => return Err(bad("dataset kind")),
                        },
                    };
                }
                ("dataset", "synthetic_n") => {
                    let n: usize = value.parse().map_err(|_| bad("synthetic_n"))?;
                    if let DatasetSpec::Synthetic { n: slot, .. } = &mut cfg.dataset {
                        *slot = n;
                    } else {
                        cfg.dataset = DatasetSpec::Synthetic { kind: SyntheticKind::Blobs, n };
                    }
                }
                ("dataset", "dir") => {
                    cfg.data_dir = if value.is_empty() { None } else { Some(value.to_string()) };
                }
                ("dataset", "train_limit") => {
                    cfg.train_limit = value.parse().map_err(|_| bad("train_limit"))?;
                }
                ("dataset", "test_limit") => {
                    cfg.test_limit = value.parse().map_err(|_| bad("test_limit"))?;
                }

                ("model", "depth") => cfg.depth = value.parse().map_err(|_| bad("depth"))?,
                ("model", "hidden") => cfg.hidden = value.parse().map_err(|_| bad("hidden"))?,
                ("model", "mode") => {
                    cfg.mode = ModeSpec::parse(value).ok_or_else(|| bad("mode"))?;
                }
                ("model", "ratio") => {
                    cfg.ratio = parse_ratio(value).ok_or_else(|| bad("ratio"))?;
                }
                ("model", "u") => cfg.num_hashes = value.parse().map_err(|_| bad("u"))?,
                ("model", "g") => cfg.recon_depth = value.parse().map_err(|_| bad("g"))?,
                ("model", "k_prime") => cfg.k_prime = value.parse().map_err(|_| bad("k_prime"))?,
                ("model", "hops") => cfg.hops = value.parse().map_err(|_| bad("hops"))?,
                ("model", "hop_shrink") => {
                    cfg.hop_shrink = value.parse().map_err(|_| bad("hop_shrink"))?;
                }
                ("model", "hop_u") => cfg.hop_u = value.parse().map_err(|_| bad("hop_u"))?,
                ("model", "hop_g") => cfg.hop_g = value.parse().map_err(|_| bad("hop_g"))?,
                ("model", "compress_output") => {
                    cfg.compress_output = value.parse().map_err(|_| bad("compress_output"))?;
                }

                ("train", "lr") => {
                    cfg.train.learning_rate = value.parse().map_err(|_| bad("lr"))?;
                }
                ("train", "momentum") => {
                    cfg.train.momentum = value.parse().map_err(|_| bad("momentum"))?;
                }
                ("train", "batch") => {
                    cfg.train.batch_size = value.parse().map_err(|_| bad("batch"))?;
                }
                ("train", "epochs") => {
                    cfg.train.epochs = value.parse().map_err(|_| bad("epochs"))?;
                }
                ("train", "decay") => {
                    cfg.train.lr_decay = value.parse().map_err(|_| bad("decay"))?;
                }
                ("train", "eval_every") => {
                    cfg.train.eval_every = value.parse().map_err(|_| bad("eval_every"))?;
                }
                ("train", "recon_boost") => {
                    cfg.train.recon_boost = value.parse().map_err(|_| bad("recon_boost"))?;
                }

                ("sweep", "regime") => {
                    cfg.regime = SweepRegime::parse(value).ok_or_else(|| bad("regime"))?;
                }
                ("sweep", "ratios") => {
                    cfg.ratios =
                        parse_list(value, parse_ratio).ok_or_else(|| bad("ratio list"))?;
                }
                ("sweep", "modes") => {
                    cfg.modes =
                        parse_list(value, ModeSpec::parse).ok_or_else(|| bad("mode list"))?;
                }

                ("", k) => return Err(err(format!("key {k:?} outside any section"))),
                (s, k) => return Err(err(format!("unknown key {k:?} in section [{s}]"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if self.num_hashes == 0 {
            return Err(Error::Config("u must be >= 1".into()));
        }
        if !(2..=4).contains(&self.recon_depth) {
            return Err(Error::Config(format!("g must be 2, 3 or 4, got {}", self.recon_depth)));
        }
        if self.depth != 3 && self.depth != 5 {
            return Err(Error::Config(format!("depth must be 3 or 5, got {}", self.depth)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.hop_shrink < 2 {
            return Err(Error::Config("hop_shrink must be >= 2".into()));
        }
        for r in &self.ratios {
            if !(*r > 0.0 && *r <= 1.0) {
                return Err(Error::Config(format!("sweep ratio {r} out of (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(|v| v.to_string()).collect();
        s.push_str("[experiment]\n");
        s.push_str(&format!("name = {}\n", self.name));
        s.push_str(&format!("seeds = {}\n", seeds.join(",")));
        s.push_str(&format!("out = {}\n", self.out_dir));

        s.push_str("\n[dataset]\n");
        s.push_str(&format!("kind = {}\n", self.dataset.kind_str()));
        if let DatasetSpec::Synthetic { n, .. } = &self.dataset {
            s.push_str(&format!("synthetic_n = {n}\n"));
        }
        if let Some(dir) = &self.data_dir {
            s.push_str(&format!("dir = {dir}\n"));
        }
        s.push_str(&format!("train_limit = {}\n", self.train_limit));
        s.push_str(&format!("test_limit = {}\n", self.test_limit));

        s.push_str("\n[model]\n");
        s.push_str(&format!("depth = {}\n", self.depth));
        s.push_str(&format!("hidden = {}\n", self.hidden));
        s.push_str(&format!("mode = {}\n", self.mode.as_str()));
        s.push_str(&format!("ratio = {}\n", self.ratio));
        s.push_str(&format!("u = {}\n", self.num_hashes));
        s.push_str(&format!("g = {}\n", self.recon_depth));
        s.push_str(&format!("k_prime = {}\n", self.k_prime));
        s.push_str(&format!("hops = {}\n", self.hops));
        s.push_str(&format!("hop_shrink = {}\n", self.hop_shrink));
        s.push_str(&format!("hop_u = {}\n", self.hop_u));
        s.push_str(&format!("hop_g = {}\n", self.hop_g));
        s.push_str(&format!("compress_output = {}\n", self.compress_output));

        s.push_str("\n[train]\n");
        s.push_str(&format!("lr = {}\n", self.train.learning_rate));
        s.push_str(&format!("momentum = {}\n", self.train.momentum));
        s.push_str(&format!("batch = {}\n", self.train.batch_size));
        s.push_str(&format!("epochs = {}\n", self.train.epochs));
        s.push_str(&format!("decay = {}\n", self.train.lr_decay));
        s.push_str(&format!("eval_every = {}\n", self.train.eval_every));
        s.push_str(&format!("recon_boost = {}\n", self.train.recon_boost));

        s.push_str("\n[sweep]\n");
        s.push_str(&format!("regime = {}\n", self.regime.as_str()));
        let ratios: Vec<String> = self.ratios.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("ratios = {}\n", ratios.join(",")));
        let modes: Vec<&str> = self.modes.iter().map(|m| m.as_str()).collect();
        s.push_str(&format!("modes = {}\n", modes.join(",")));
        s
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The master seed for train-time derivations is the per-run seed.
    pub fn train_config_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

// TrainConfig equality is field-wise; used by the round-trip test.
impl PartialEq for TrainConfig {
    fn eq(&self, other: &Self) -> bool {
        self.learning_rate == other.learning_rate
            && self.momentum == other.momentum
            && self.batch_size == other.batch_size
            && self.epochs == other.epochs
            && self.seed == other.seed
            && self.eval_every == other.eval_every
            && self.lr_decay == other.lr_decay
            && self.recon_boost == other.recon_boost
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# Table-1-style base configuration
[experiment]
name = u4-g3-base
seeds = 1,2,3
out = runs/base

[dataset]
kind = mnist
train_limit = 10000
test_limit = 2000

[model]
depth = 3
hidden = 200
mode = funhash
ratio = 1/8
u = 4
g = 3

[train]
lr = 0.01
momentum = 0.9
batch = 64
epochs = 15

[sweep]
regime = fixed-virtual
ratios = 1, 1/2, 1/4
modes = hashednets, funhash
";

    #[test]
    fn parses_fractions_and_lists() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.name, "u4-g3-base");
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.ratio, 0.125);
        assert_eq!(cfg.num_hashes, 4);
        assert_eq!(cfg.recon_depth, 3);
        assert_eq!(cfg.ratios, vec![1.0, 0.5, 0.25]);
        assert_eq!(cfg.modes, vec![ModeSpec::HashedNets, ModeSpec::FunHash]);
        assert_eq!(cfg.train_limit, 10000);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let text = cfg.to_text();
        let cfg2 = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, cfg2);

        // also from a non-default starting point
        let mut cfg3 = ExperimentConfig::default();
        cfg3.dataset = DatasetSpec::Synthetic { kind: SyntheticKind::Xor, n: 512 };
        cfg3.ratio = 1.0 / 3.0;
        cfg3.mode = ModeSpec::MultiHop;
        cfg3.hops = 2;
        let cfg4 = ExperimentConfig::parse(&cfg3.to_text()).unwrap();
        assert_eq!(cfg3, cfg4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("[model]\ndepth = 3\nbogus_key = 1\n").unwrap_err();
        match err {
            Error::ConfigParse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus_key"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(ExperimentConfig::parse("x = 1\n").is_err());
        assert!(ExperimentConfig::parse("[nope]\n").is_err());
        assert!(ExperimentConfig::parse("[model]\nratio = 0\n").is_err());
        assert!(ExperimentConfig::parse("[model]\ng = 7\n").is_err());
        assert!(ExperimentConfig::parse("[model]\ndepth = 4\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = ExperimentConfig::parse("# nothing\n\n[model]\nhidden = 64 # inline\n").unwrap();
        assert_eq!(cfg.hidden, 64);
    }
}
