//! Benchmark and audit harness for `rank-oram`: trace generation, schedule
//! replay against the client structures, full protocol runs and
//! obliviousness audits.

pub mod audit;
pub mod cli;
mod error;
pub mod metrics;
pub mod replay;
pub mod run;
pub mod stats;
pub mod trace;

pub use error::{BenchError, Result};
