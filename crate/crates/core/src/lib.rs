//! Few-shot hypothesis adaptation.
//!
//! Given a frozen source-domain classifier (encoder + classifier head) and at
//! most seven labeled target samples per class, train a target classifier.
//! The crate contains the full one-step TOHAN procedure (per-class generators
//! producing an intermediate domain, interleaved with pairwise adversarial
//! adaptation through a four-way group discriminator), the benchmark ladder
//! (WA, FT, SHOT, S+FADA, T+FADA), the two-step ablation ST+FADA, and a seeded
//! experiment harness.
//!
//! Modules:
//! - [`data`]: synthetic rotated Gaussian tasks, few-shot sampling, FHD1 files
//! - [`nn`]: MLPs with exact reverse-mode gradients, Adam, gradient checking
//! - [`losses`]: generator losses, augmented L1, group and adaptation losses
//! - [`pairing`]: the four pair groups and the pair embedding
//! - [`trainers`]: every method
//! - [`harness`]: multi-run experiments, summaries, embedding export
//! - [`cli`]: the `fha` command line

pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod numfmt;
pub mod pairing;
pub mod rng;
pub mod trainers;

pub use error::{FhaError, Result};
