//! Harness internals behind the `rnn-cli` binary: configuration, dataset
//! generators, model builders, trainers and metric emission.

pub mod check;
pub mod config;
pub mod data;
pub mod metrics;
pub mod models;
pub mod train;
