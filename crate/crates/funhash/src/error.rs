//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} needs {needed} bytes, budget is {budget}")]
    Resource {
        what: &'static str,
        needed: usize,
        budget: usize,
    },

    #[error("enumeration space of {needed} bins exceeds cap {cap}")]
    EnumerationCap { needed: usize, cap: usize },

    #[error("bad IDX magic {found:#010x} in {path} (expected {expected:#010x})")]
    IdxBadMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("truncated IDX file {path}: wanted {wanted} bytes, got {got}")]
    IdxTruncated {
        path: String,
        wanted: usize,
        got: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        sample: usize,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
