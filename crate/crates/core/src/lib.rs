//! Rank ORAM: a hierarchical oblivious RAM whose client keeps block
//! locations in compressed per-level dictionaries, plus the baseline
//! client structures it is measured against.

pub mod baselines;
pub mod codec;
pub mod crypto;
mod error;
pub mod hist;
pub mod oram;
pub mod server;
pub mod shuffle;

pub use error::{Error, Result};
