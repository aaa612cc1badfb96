//! compressedCounters: per-block access counts stored as counter
//! intervals, plus per-block levels stored as a run-length string. Both are
//! [`IntervalMap`]s, so every interval costs `log2 n` bits of start plus
//! the bit width of the largest count (or level) in its segment.

use std::hash::Hasher;

use siphasher::sip::SipHasher24;

use super::interval_map::{IntervalMap, MapCounters};
use crate::error::{invalid, Result};

pub const DEFAULT_Z: usize = 20;

#[derive(Clone, Debug)]
pub struct CompressedCounters {
    n: u64,
    depth: u32,
    bins: u64,
    key: [u8; 16],
    counts: IntervalMap<u64>,
    levels: IntervalMap<u8>,
    peak_bits: u64,
}

impl CompressedCounters {
    /// Counts start at 0 and every level at `depth`.
    pub fn new(n: u64, depth: u32, z: usize, key: [u8; 16]) -> Result<Self> {
        if depth > u32::from(u8::MAX) {
            return invalid("depth must fit in a byte");
        }
        let mut s = Self {
            n,
            depth,
            bins: ((n as f64).sqrt().ceil() as u64).max(1),
            key,
            counts: IntervalMap::new(n, z, 0)?,
            levels: IntervalMap::new(n, z, depth as u8)?,
            peak_bits: 0,
        };
        s.track_peak();
        Ok(s)
    }

    pub fn universe(&self) -> u64 {
        self.n
    }

    pub fn partitions(&self) -> u64 {
        self.bins
    }

    pub fn counts(&self) -> &IntervalMap<u64> {
        &self.counts
    }

    pub fn levels(&self) -> &IntervalMap<u8> {
        &self.levels
    }

    fn track_peak(&mut self) {
        self.peak_bits = self.peak_bits.max(self.size_in_bits());
    }

    pub fn increment(&mut self, a: u64) -> Result<()> {
        let c = self.counts.get(a)?;
        let Some(next) = c.checked_add(1) else {
            return invalid(format!("counter of {a} overflowed"));
        };
        self.counts.set(a, next)?;
        self.track_peak();
        Ok(())
    }

    pub fn count(&self, a: u64) -> Result<u64> {
        self.counts.get(a)
    }

    /// `PRF(a || count(a)) mod ceil(sqrt n)`.
    pub fn partition(&self, a: u64) -> Result<u64> {
        let mut h = SipHasher24::new_with_key(&self.key);
        h.write_u64(a);
        h.write_u64(self.count(a)?);
        Ok(h.finish() % self.bins)
    }

    pub fn set_level(&mut self, a: u64, l: u32) -> Result<()> {
        if l > self.depth {
            return invalid(format!("level {l} above {}", self.depth));
        }
        self.levels.set(a, l as u8)?;
        self.track_peak();
        Ok(())
    }

    /// Every block back to the top level (after a full rebuild).
    pub fn reset_levels(&mut self) -> Result<()> {
        self.levels.set_range(0, self.n, self.depth as u8)?;
        self.track_peak();
        Ok(())
    }

    pub fn level(&self, a: u64) -> Result<u32> {
        Ok(u32::from(self.levels.get(a)?))
    }

    pub fn size_in_bits(&self) -> u64 {
        self.counts.size_in_bits() + self.levels.size_in_bits() + 8 * 16 + 2 * 64
    }

    pub fn peak_bits(&self) -> u64 {
        self.peak_bits
    }

    /// Element steps and rebalancing work across both stores.
    pub fn work(&self) -> MapCounters {
        let (a, b) = (self.counts.counters(), self.levels.counters());
        MapCounters {
            element_steps: a.element_steps + b.element_steps,
            rotations: a.rotations + b.rotations,
            resizes: a.resizes + b.resizes,
            splits: a.splits + b.splits,
            merges: a.merges + b.merges,
            borrows: a.borrows + b.borrows,
            max_touched: a.max_touched.max(b.max_touched),
            max_rotations: a.max_rotations.max(b.max_rotations),
        }
    }
}
