//! Dialect identification toolkit: acoustic front-end, transformer and CNN
//! classifiers, training, score fusion and evaluation, and a synthetic corpus
//! whose classes differ only in long-range temporal structure.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod fsutil;
pub mod kv;
pub mod models;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{DidError, Result};
