//! Client-side location metadata: one compressed dictionary per level.
//!
//! `Φ_l` holds the addresses stored in level `l < L`. Level `L` is never
//! stored: an address found in no dictionary lives there. An address that
//! was accessed again after its level was built stays in that (higher)
//! dictionary as a stale entry until the level is merged away; `level`
//! returns the minimum, which is where the live copy is.

use crate::codec::dict::{ceil_log2, default_width, merge_streams_counted, RleDictionary};
use crate::error::{invalid, Result};

const HEADER_BITS: u64 = 2 * 64;
const IMAGE_MAGIC: &[u8; 4] = b"HMv1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoricalMembership {
    universe: u64,
    depth: u32,
    width: usize,
    levels: Vec<RleDictionary>,
    work: u64,
}

impl HistoricalMembership {
    /// Structure for `n` addresses; `n` is rounded up to a power of two.
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 {
            return invalid("address space must be non-empty");
        }
        let universe = n.next_power_of_two();
        let depth = ceil_log2(universe);
        let width = default_width(universe);
        Ok(Self {
            universe,
            depth,
            width,
            levels: (0..depth)
                .map(|_| RleDictionary::empty(universe, width))
                .collect(),
            work: 0,
        })
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    /// `L = log2 n`, the index of the top level.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dictionary(&self, l: u32) -> Option<&RleDictionary> {
        self.levels.get(l as usize)
    }

    /// Cardinality of `Φ_l` (for `l = L`, the addresses not stored below).
    pub fn level_len(&self, l: u32) -> u64 {
        self.levels.get(l as usize).map_or(0, RleDictionary::len)
    }

    /// Element steps spent in inserts and merges so far.
    pub fn work(&self) -> u64 {
        self.work
    }

    pub fn level(&self, x: u64) -> u32 {
        self.levels
            .iter()
            .position(|d| d.contains(x))
            .map_or(self.depth, |l| l as u32)
    }

    pub fn position(&self, x: u64) -> u64 {
        self.locate(x).1
    }

    /// `(level(x), position(x))` with a single pass over the dictionaries.
    pub fn locate(&self, x: u64) -> (u32, u64) {
        let l = self.level(x);
        if l == self.depth {
            (l, x)
        } else {
            (l, self.levels[l as usize].rank(x))
        }
    }

    pub fn insert_into_level0(&mut self, x: u64) -> Result<()> {
        if x >= self.universe {
            return invalid(format!("address {x} outside universe {}", self.universe));
        }
        if self.depth == 0 {
            return Ok(());
        }
        if self.levels[0].contains(x) {
            return Ok(());
        }
        let single = RleDictionary::build_from_sorted(&[x], self.universe, self.width)?;
        let merged = merge_streams_counted(&[&self.levels[0], &single], &mut self.work)?;
        self.levels[0] = merged;
        Ok(())
    }

    /// `Φ_l ← Φ_0 ∪ … ∪ Φ_{l-1}`, then empties the lower levels.
    pub fn merge_levels(&mut self, l: u32) -> Result<()> {
        if l == 0 || l >= self.depth {
            return invalid(format!(
                "merge target {l} outside [1, {}]",
                self.depth.saturating_sub(1)
            ));
        }
        if !self.levels[l as usize].is_empty() {
            return invalid(format!("merge target level {l} is not empty"));
        }
        let merged = {
            let refs: Vec<&RleDictionary> = self.levels[..l as usize].iter().collect();
            merge_streams_counted(&refs, &mut self.work)?
        };
        self.levels[l as usize] = merged;
        for d in &mut self.levels[..l as usize] {
            *d = RleDictionary::empty(self.universe, self.width);
        }
        Ok(())
    }

    /// Rebuild into the top level: every stored dictionary empties.
    pub fn merge_into_top(&mut self) {
        for d in &mut self.levels {
            *d = RleDictionary::empty(self.universe, self.width);
        }
    }

    pub fn size_in_bits(&self) -> u64 {
        HEADER_BITS
            + self
                .levels
                .iter()
                .map(RleDictionary::size_in_bits)
                .sum::<u64>()
    }

    /// Flat checkpoint image: magic, universe, then per level the
    /// cardinality, gap bit length, gap words and pointer table, all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&self.universe.to_le_bytes());
        for d in &self.levels {
            d.write_bytes(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(rest) = bytes.strip_prefix(IMAGE_MAGIC.as_slice()) else {
            return invalid("not a historical-membership image");
        };
        if rest.len() < 8 {
            return invalid("truncated image header");
        }
        let universe = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
        if !universe.is_power_of_two() {
            return invalid("image universe is not a power of two");
        }
        let mut hm = Self::new(universe)?;
        let mut input = &rest[8..];
        for l in 0..hm.depth as usize {
            hm.levels[l] = RleDictionary::read_bytes(&mut input, universe, hm.width)?;
        }
        if !input.is_empty() {
            return invalid("trailing bytes after image");
        }
        Ok(hm)
    }
}
