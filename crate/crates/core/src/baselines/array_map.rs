//! Uncompressed position map: one `(level, counter)` record per block.

use crate::codec::dict::ceil_log2;
use crate::error::{invalid, Result};

#[derive(Clone, Debug)]
pub struct ArrayPositionMap {
    depth: u32,
    levels: Vec<u8>,
    counters: Vec<u64>,
    updates: u64,
}

impl ArrayPositionMap {
    /// All blocks start at the top level `depth` with counter 0.
    pub fn new(n: u64, depth: u32) -> Result<Self> {
        if n == 0 || depth > u8::MAX as u32 {
            return invalid("array map needs n >= 1 and depth <= 255");
        }
        Ok(Self {
            depth,
            levels: vec![depth as u8; n as usize],
            counters: vec![0; n as usize],
            updates: 0,
        })
    }

    pub fn len(&self) -> u64 {
        self.levels.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `ceil(log2(L + 1))` level bits plus a 64-bit counter word.
    pub fn record_bits(&self) -> u64 {
        u64::from(ceil_log2(u64::from(self.depth) + 1)) + 64
    }

    pub fn size_in_bits(&self) -> u64 {
        self.len() * self.record_bits()
    }

    /// Number of record writes so far; each is a single indexed store.
    pub fn update_ops(&self) -> u64 {
        self.updates
    }

    fn check(&self, a: u64) -> Result<usize> {
        if a >= self.len() {
            return invalid(format!("address {a} outside [0, {})", self.len()));
        }
        Ok(a as usize)
    }

    pub fn update(&mut self, a: u64, level: u32, counter: u64) -> Result<()> {
        let i = self.check(a)?;
        if level > self.depth {
            return invalid(format!("level {level} above {}", self.depth));
        }
        self.levels[i] = level as u8;
        self.counters[i] = counter;
        self.updates += 1;
        Ok(())
    }

    pub fn set_level(&mut self, a: u64, level: u32) -> Result<()> {
        let c = self.counters[self.check(a)?];
        self.update(a, level, c)
    }

    pub fn query(&self, a: u64) -> Result<(u32, u64)> {
        let i = self.check(a)?;
        Ok((u32::from(self.levels[i]), self.counters[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_after_update() {
        let mut m = ArrayPositionMap::new(16, 4).unwrap();
        assert_eq!(m.query(3).unwrap(), (4, 0));
        m.update(3, 1, 77).unwrap();
        assert_eq!(m.query(3).unwrap(), (1, 77));
        m.set_level(3, 2).unwrap();
        assert_eq!(m.query(3).unwrap(), (2, 77));
        assert!(m.update(16, 0, 0).is_err());
        assert!(m.update(0, 5, 0).is_err());
        assert_eq!(m.update_ops(), 2);
    }

    #[test]
    fn size_is_n_records() {
        let m = ArrayPositionMap::new(1 << 20, 20).unwrap();
        // 5 level bits + 64 counter bits per block, about 8.6 MiB.
        assert_eq!(m.record_bits(), 69);
        assert_eq!(m.size_in_bits(), 69 << 20);
        let mb = m.size_in_bits() as f64 / 8.0 / (1 << 20) as f64;
        assert!((8.0..9.0).contains(&mb));
    }
}
