//! Dataset ingestion: IDX (MNIST container) files, synthetic generators,
//! and deterministic splits. Inputs are scaled into `[0, 1]`; datasets are
//! immutable after loading and freely shared.

use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const IDX_MAGIC_IMAGES: u32 = 2051;
pub const IDX_MAGIC_LABELS: u32 = 2049;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// N x D inputs in `[0, 1]`.
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// First `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    fn select(&self, idx: &[usize]) -> Dataset {
        let mut inputs = Array2::zeros((idx.len(), self.dim()));
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &s) in idx.iter().enumerate() {
            inputs.row_mut(row).assign(&self.inputs.row(s));
            labels.push(self.labels[s]);
        }
        Dataset { inputs, labels, classes: self.classes }
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    open_maybe_gz(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.display().to_string(),
            wanted: off + 4,
            got: bytes.len(),
        })
}

/// Load an IDX image/label pair, validating magics, sizes, and labels.
pub fn load_idx(images_path: &Path, labels_path: &Path, classes: usize) -> Result<Dataset> {
    let img = read_all(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_MAGIC_IMAGES {
        return Err(Error::IdxBadMagic {
            path: images_path.display().to_string(),
            found: magic,
            expected: IDX_MAGIC_IMAGES,
        });
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let dim = rows * cols;
    let want = 16 + n * dim;
    if img.len() < want {
        return Err(Error::IdxTruncated {
            path: images_path.display().to_string(),
            wanted: want,
            got: img.len(),
        });
    }

    let lbl = read_all(labels_path)?;
    let magic = be_u32(&lbl, 0, labels_path)?;
    if magic != IDX_MAGIC_LABELS {
        return Err(Error::IdxBadMagic {
            path: labels_path.display().to_string(),
            found: magic,
            expected: IDX_MAGIC_LABELS,
        });
    }
    let n_labels = be_u32(&lbl, 4, labels_path)? as usize;
    if n_labels != n {
        return Err(Error::IdxCountMismatch { images: n, labels: n_labels });
    }
    let want = 8 + n_labels;
    if lbl.len() < want {
        return Err(Error::IdxTruncated {
            path: labels_path.display().to_string(),
            wanted: want,
            got: lbl.len(),
        });
    }

    let mut labels = Vec::with_capacity(n);
    for (s, &b) in lbl[8..8 + n].iter().enumerate() {
        let label = b as usize;
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes, sample: s });
        }
        labels.push(label);
    }

    let inputs = Array2::from_shape_fn((n, dim), |(s, d)| f64::from(img[16 + s * dim + d]) / 255.0);
    Ok(Dataset { inputs, labels, classes })
}

/// Write raw pixels as an IDX image file (no compression).
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut f = File::create(path)?;
    f.write_all(&IDX_MAGIC_IMAGES.to_be_bytes())?;
    f.write_all(&(n as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    f.write_all(pixels)?;
    Ok(())
}

/// Write labels as an IDX label file (no compression).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(&IDX_MAGIC_LABELS.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

/// Dataset root: `FUNHASH_DATA_DIR` if set, else `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("FUNHASH_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn resolve_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} (or .gz) not found in {}", stem, dir.display()),
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Load one MNIST split from a directory holding the standard
/// `train-*`/`t10k-*` IDX files, optionally gzipped.
pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<Dataset> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let images = resolve_idx(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = resolve_idx(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    load_idx(&images, &labels, 10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Two linearly separable Gaussian clouds in the unit square.
    Blobs,
    /// The XOR quadrant labelling; not linearly separable.
    Xor,
    /// 8x8 binary images: one filled rectangle vs two disjoint ones.
    ConvexLike,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "blobs" => Some(Self::Blobs),
            "xor" => Some(Self::Xor),
            "convex-like" => Some(Self::ConvexLike),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Blobs => "blobs",
            Self::Xor => "xor",
            Self::ConvexLike => "convex-like",
        }
    }
}

/// Deterministic synthetic dataset of `n` samples.
pub fn make_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config("synthetic dataset needs n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::Blobs => {
            let centers = [(0.25_f64, 0.25_f64), (0.75_f64, 0.75_f64)];
            let mut inputs = Array2::zeros((n, 2));
            let mut labels = Vec::with_capacity(n);
            for s in 0..n {
                let class = s % 2;
                let (cx, cy) = centers[class];
                let x = (cx + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0);
                let y = (cy + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0);
                inputs[[s, 0]] = x;
                inputs[[s, 1]] = y;
                labels.push(class);
            }
            Ok(Dataset { inputs, labels, classes: 2 })
        }
        SyntheticKind::Xor => {
            let mut inputs = Array2::zeros((n, 2));
            let mut labels = Vec::with_capacity(n);
            for s in 0..n {
                let x: f64 = rng.gen_range(0.0..1.0);
                let y: f64 = rng.gen_range(0.0..1.0);
                inputs[[s, 0]] = x;
                inputs[[s, 1]] = y;
                labels.push(usize::from((x > 0.5) != (y > 0.5)));
            }
            Ok(Dataset { inputs, labels, classes: 2 })
        }
        SyntheticKind::ConvexLike => {
            let side = 8usize;
            let mut inputs = Array2::zeros((n, side * side));
            let mut labels = Vec::with_capacity(n);
            let fill =
                |img: &mut ndarray::ArrayViewMut1<f64>, r0: usize, c0: usize, r1: usize, c1: usize| {
                    for r in r0..r1 {
                        for c in c0..c1 {
                            img[r * side + c] = 1.0;
                        }
                    }
                };
            for s in 0..n {
                let class = s % 2;
                let mut row = inputs.row_mut(s);
                if class == 0 {
                    // one filled rectangle: convex
                    let r0 = rng.gen_range(0..4);
                    let c0 = rng.gen_range(0..4);
                    let r1 = rng.gen_range(r0 + 2..=side.min(r0 + 5));
                    let c1 = rng.gen_range(c0 + 2..=side.min(c0 + 5));
                    fill(&mut row, r0, c0, r1, c1);
                } else {
                    // two disjoint rectangles: not convex
                    let r0 = rng.gen_range(0..2);
                    let c0 = rng.gen_range(0..2);
                    fill(&mut row, r0, c0, r0 + 2, c0 + 2);
                    let r2 = rng.gen_range(5..7);
                    let c2 = rng.gen_range(5..7);
                    fill(&mut row, r2, c2, r2 + 2, c2 + 2);
                }
                labels.push(class);
            }
            Ok(Dataset { inputs, labels, classes: 2 })
        }
    }
}

/// Deterministic disjoint split; `fraction` is the validation share.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(Error::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let n = dataset.len();
    let n_val = ((n as f64) * fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    Ok((dataset.select(train_idx), dataset.select(val_idx)))
}
