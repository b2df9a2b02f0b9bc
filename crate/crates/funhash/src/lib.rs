//! Compressed fully-connected layers via functional hashing.
//!
//! A virtual weight matrix is never stored. Every entry is recovered on
//! demand from a small trainable vector: a family of keyed hash functions
//! fetches several values from the vector and a small reconstruction
//! network, trained jointly with the host model, maps them to the entry.
//! Single-hash weight sharing (identity reconstruction) is available as a
//! degenerate mode, along with dual-space hashing of the reconstruction
//! parameters and recursive multi-hop compression of the vector itself.
//!
//! The crate ships runnable demos under `examples/` and a small `funhash`
//! binary with `train`, `sweep`, and `verify` subcommands for batch
//! experiments.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod hash;
pub mod kernel;
pub mod network;
pub mod recon;
pub mod trainer;
pub mod verify;
pub mod vlayer;

pub use error::{Error, Result};
