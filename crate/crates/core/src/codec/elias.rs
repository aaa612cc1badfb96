//! Elias-gamma codes for strictly positive integers.
//!
//! `x` is written as `floor(log2 x)` zero bits followed by the binary form of
//! `x` (whose leading bit is always one). All gap encoding goes through
//! [`encode`] and [`decode`], so swapping in another prefix-free code only
//! touches this file.

use super::bits::{BitReader, BitStream};
use crate::error::{invalid, Result};

/// Length in bits of the codeword for `x`.
#[inline]
pub fn code_len(x: u64) -> u32 {
    debug_assert!(x >= 1);
    2 * (63 - x.leading_zeros()) + 1
}

pub fn encode(x: u64, out: &mut BitStream) -> Result<()> {
    if x == 0 {
        return invalid("Elias-gamma code is defined for x >= 1");
    }
    let n = 63 - x.leading_zeros();
    out.push_zeros(n as u64);
    out.push_bits(x, n + 1);
    Ok(())
}

/// Decodes one codeword. Returns `None` on a truncated or malformed stream.
#[inline]
pub fn decode(r: &mut BitReader<'_>) -> Option<u64> {
    let n = r.read_zero_run()?;
    if n > 63 {
        return None;
    }
    r.read_bits(n + 1)
}

/// Renders the codeword for `x` as a '0'/'1' string (fixtures and debugging).
pub fn encode_to_string(x: u64) -> Result<String> {
    let mut s = BitStream::new();
    encode(x, &mut s)?;
    Ok((0..s.len())
        .map(|i| if s.get(i) == Some(true) { '1' } else { '0' })
        .collect())
}
