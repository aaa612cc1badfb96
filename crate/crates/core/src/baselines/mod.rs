//! Comparison client structures: a plain per-block array and
//! compressedCounters (counter intervals plus a run-length level string).

pub mod array_map;
pub mod counters;
pub mod interval_map;

pub use array_map::ArrayPositionMap;
pub use counters::CompressedCounters;
pub use interval_map::{IntervalMap, MapCounters, RunValue};
