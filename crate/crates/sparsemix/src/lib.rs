//! Clustering with a bank of sparse dictionary auto-encoders.
//!
//! Each of K clusters owns a dictionary; a sample is encoded against every
//! dictionary by an unrolled ISTA/FISTA solver, scored by an energy
//! (reconstruction + sparsity penalty - log prior), and soft-assigned through
//! a softmax over negated energies. Training differentiates the attention-
//! weighted energy end to end through the unrolled encoder, including the
//! tied appearance of each dictionary in its encoder and decoder, and updates
//! parameters with Adam. Partially observed samples participate through
//! per-coordinate masks. Dictionaries are initialized from clustered data
//! subsets rather than pre-training.

pub mod dataio;
pub mod encoder;
mod error;
pub mod grad;
pub mod init;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod objective;
pub mod trainer;

pub mod cli;

pub use error::{Error, Result};
