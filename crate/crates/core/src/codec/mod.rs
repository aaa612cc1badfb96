//! Bit-level coding and the compressed indexed dictionary.

pub mod bits;
pub mod dict;
pub mod elias;

pub use bits::{BitReader, BitStream};
pub use dict::{default_width, merge_streams, merge_streams_counted, DictBuilder, RleDictionary};
