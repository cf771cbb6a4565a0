//! Experiment harness behind the `fluctsel` binary.
//!
//! Each subcommand reads a [`config::Config`], derives all of its random
//! streams from one master seed and writes comma-separated tables plus a
//! `manifest.toml` into the output directory.

pub mod commands;
pub mod config;
pub mod io;
pub mod verify;

use fluctsel::seeds::{derive_seed, Purpose};

/// Master seed of replicate `r`; replicate 0 serves the single-run commands.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    derive_seed(master, Purpose::Replicate, r)
}

/// Seed handed to the sampler within a replicate. Every technique and prior
/// of the replicate shares it.
pub fn sampler_seed(replicate: u64) -> u64 {
    derive_seed(replicate, Purpose::Aux, 0)
}

/// Master seed of efficiency-study setting `i`; its replicates derive from it.
pub fn setting_seed(master: u64, i: u64) -> u64 {
    derive_seed(master, Purpose::Aux, 1000 + i)
}

pub const SEED_SCHEME: &str = "replicate r: derive_seed(seed, Replicate, r); \
data: the replicate seed; sampler: derive_seed(replicate seed, Aux, 0); \
efficiency setting i: replicates derive from derive_seed(seed, Aux, 1000 + i)";
