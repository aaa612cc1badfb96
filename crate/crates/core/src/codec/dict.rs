//! Run-length (gap) encoded indexed dictionary.
//!
//! A sorted address set `x_1 < x_2 < ... < x_k` is stored as the Elias-gamma
//! codes of `x_1 + 1, x_2 - x_1, ..., x_k - x_{k-1}` (every gap is at least
//! one, so the stream is self-decoding). Every `width`-th member gets a
//! forward pointer holding its address and the bit offset of its gap code,
//! which bounds every query to a binary search over the pointers plus a
//! scan of at most `width` codes.

use super::bits::{BitReader, BitStream};
use super::elias;
use crate::error::{invalid, Result};

/// Fixed per-dictionary header: universe, cardinality, gap bit length, max member.
pub const HEADER_BITS: u64 = 4 * 64;
/// Bit offsets in forward pointers are accounted as full words.
pub const POINTER_OFFSET_BITS: u64 = 64;

/// Segment width for a given universe: `max(8, ceil(log2 universe))`.
pub fn default_width(universe: u64) -> usize {
    (ceil_log2(universe) as usize).max(8)
}

pub(crate) fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RleDictionary {
    universe: u64,
    len: u64,
    width: usize,
    max: Option<u64>,
    gaps: BitStream,
    seg_addrs: Vec<u64>,
    seg_offsets: Vec<u64>,
}

/// Streaming constructor; members must be pushed in strictly increasing order.
#[derive(Debug)]
pub struct DictBuilder {
    dict: RleDictionary,
}

impl DictBuilder {
    pub fn new(universe: u64, width: usize) -> Result<Self> {
        if width == 0 {
            return invalid("segment width must be >= 1");
        }
        Ok(Self {
            dict: RleDictionary {
                universe,
                len: 0,
                width,
                max: None,
                gaps: BitStream::new(),
                seg_addrs: Vec::new(),
                seg_offsets: Vec::new(),
            },
        })
    }

    pub fn push(&mut self, x: u64) -> Result<()> {
        let d = &mut self.dict;
        if x >= d.universe {
            return invalid(format!("address {x} outside universe {}", d.universe));
        }
        let gap = match d.max {
            None => x + 1,
            Some(prev) if x > prev => x - prev,
            Some(prev) => {
                return invalid(format!(
                    "addresses must be strictly increasing ({x} after {prev})"
                ))
            }
        };
        if d.len.is_multiple_of(d.width as u64) {
            d.seg_addrs.push(x);
            d.seg_offsets.push(d.gaps.len());
        }
        elias::encode(gap, &mut d.gaps)?;
        d.max = Some(x);
        d.len += 1;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.dict.len
    }

    pub fn is_empty(&self) -> bool {
        self.dict.len == 0
    }

    pub fn finish(self) -> RleDictionary {
        self.dict
    }
}

impl RleDictionary {
    pub fn empty(universe: u64, width: usize) -> Self {
        DictBuilder::new(universe, width.max(1))
            .expect("width clamped to >= 1")
            .finish()
    }

    pub fn build_from_sorted(addresses: &[u64], universe: u64, width: usize) -> Result<Self> {
        let mut b = DictBuilder::new(universe, width)?;
        for &x in addresses {
            b.push(x)?;
        }
        Ok(b.finish())
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    /// Number of members.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn segment_count(&self) -> usize {
        self.seg_addrs.len()
    }

    pub fn max(&self) -> Option<u64> {
        self.max
    }

    pub fn gap_bits(&self) -> u64 {
        self.gaps.len()
    }

    /// Bits per forward pointer: a word-sized offset plus a packed address.
    pub fn pointer_bits(&self) -> u64 {
        POINTER_OFFSET_BITS + ceil_log2(self.universe).max(1) as u64
    }

    pub fn size_in_bits(&self) -> u64 {
        HEADER_BITS + self.gaps.len() + self.seg_addrs.len() as u64 * self.pointer_bits()
    }

    pub fn iter(&self) -> DictIter<'_> {
        DictIter {
            reader: self.gaps.reader(),
            prev: None,
            remaining: self.len,
        }
    }

    /// Scans the segment holding `x`, returning (members < x, x is a member).
    fn locate(&self, x: u64) -> (u64, bool) {
        match self.max {
            None => return (0, false),
            Some(m) if x > m => return (self.len, false),
            _ => {}
        }
        let seg = self.seg_addrs.partition_point(|&a| a <= x);
        if seg == 0 {
            return (0, false);
        }
        let seg = seg - 1;
        let base = seg as u64 * self.width as u64;
        let mut cur = self.seg_addrs[seg];
        if cur == x {
            return (base, true);
        }
        let mut reader = self.gaps.reader_at(self.seg_offsets[seg]);
        elias::decode(&mut reader).expect("pointer references a codeword");
        let end = (base + self.width as u64).min(self.len);
        let mut below = base + 1;
        while below < end {
            cur += elias::decode(&mut reader).expect("gap stream holds len codes");
            if cur >= x {
                return (below, cur == x);
            }
            below += 1;
        }
        (below, false)
    }

    pub fn contains(&self, x: u64) -> bool {
        self.locate(x).1
    }

    /// Number of members strictly less than `x`.
    pub fn rank(&self, x: u64) -> u64 {
        self.locate(x).0
    }

    /// The `r`-th smallest member, zero-based.
    pub fn index(&self, r: u64) -> Result<u64> {
        if r >= self.len {
            return invalid(format!("index {r} out of range for {} members", self.len));
        }
        let seg = (r / self.width as u64) as usize;
        let mut cur = self.seg_addrs[seg];
        let mut reader = self.gaps.reader_at(self.seg_offsets[seg]);
        elias::decode(&mut reader).expect("pointer references a codeword");
        for _ in 0..(r - seg as u64 * self.width as u64) {
            cur += elias::decode(&mut reader).expect("gap stream holds len codes");
        }
        Ok(cur)
    }

    /// Sorted member list, one decimal address per line.
    pub fn to_text(&self) -> String {
        self.iter().map(|x| format!("{x}\n")).collect()
    }

    pub fn from_text(text: &str, universe: u64, width: usize) -> Result<Self> {
        let mut b = DictBuilder::new(universe, width)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let x = line
                .parse::<u64>()
                .map_err(|e| crate::Error::InvalidArgument(format!("line {}: {e}", i + 1)))?;
            b.push(x)?;
        }
        Ok(b.finish())
    }

    pub(crate) fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.len.to_le_bytes());
        out.extend_from_slice(&self.gaps.len().to_le_bytes());
        for w in self.gaps.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.seg_addrs.len() as u64).to_le_bytes());
        for (a, o) in self.seg_addrs.iter().zip(&self.seg_offsets) {
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&o.to_le_bytes());
        }
    }

    pub(crate) fn read_bytes(input: &mut &[u8], universe: u64, width: usize) -> Result<Self> {
        let len = take_u64(input)?;
        let bit_len = take_u64(input)?;
        let words = (0..bit_len.div_ceil(64))
            .map(|_| take_u64(input))
            .collect::<Result<Vec<_>>>()?;
        let gaps = BitStream::from_raw(words, bit_len)
            .ok_or_else(|| crate::Error::InvalidArgument("gap stream length mismatch".into()))?;
        let segs = take_u64(input)?;
        let mut seg_addrs = Vec::with_capacity(segs as usize);
        let mut seg_offsets = Vec::with_capacity(segs as usize);
        for _ in 0..segs {
            seg_addrs.push(take_u64(input)?);
            seg_offsets.push(take_u64(input)?);
        }
        let mut d = RleDictionary {
            universe,
            len,
            width,
            max: None,
            gaps,
            seg_addrs,
            seg_offsets,
        };
        if d.seg_addrs.len() as u64 != len.div_ceil(width as u64) {
            return invalid("pointer table does not match cardinality");
        }
        let mut count = 0;
        let mut last = None;
        for x in d.iter() {
            if x >= universe {
                return invalid("decoded address outside universe");
            }
            count += 1;
            last = Some(x);
        }
        if count != len {
            return invalid("gap stream holds fewer codes than the cardinality");
        }
        d.max = last;
        Ok(d)
    }
}

fn take_u64(input: &mut &[u8]) -> Result<u64> {
    if input.len() < 8 {
        return invalid("truncated dictionary image");
    }
    let (head, rest) = input.split_at(8);
    *input = rest;
    Ok(u64::from_le_bytes(head.try_into().expect("8 bytes")))
}

pub struct DictIter<'a> {
    reader: BitReader<'a>,
    prev: Option<u64>,
    remaining: u64,
}

impl Iterator for DictIter<'_> {
    type Item = u64;

    #[inline]
    fn next(&mut self) -> Option<u64> {
        if self.remaining == 0 {
            return None;
        }
        let gap = elias::decode(&mut self.reader)?;
        let x = match self.prev {
            None => gap - 1,
            Some(p) => p + gap,
        };
        self.prev = Some(x);
        self.remaining -= 1;
        Some(x)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

impl ExactSizeIterator for DictIter<'_> {}

/// Union of several dictionaries in one ordered pass.
///
/// Holds one decoded head address per input and emits the smallest each
/// round, so working memory is `O(dicts.len())` addresses plus the output
/// stream. The output uses the first input's segment width.
pub fn merge_streams(dicts: &[&RleDictionary]) -> Result<RleDictionary> {
    let mut work = 0;
    merge_streams_counted(dicts, &mut work)
}

/// [`merge_streams`] that adds its element steps (head comparisons plus
/// decodes) to `work`.
pub fn merge_streams_counted(dicts: &[&RleDictionary], work: &mut u64) -> Result<RleDictionary> {
    let Some(first) = dicts.first() else {
        return invalid("merge needs at least one dictionary");
    };
    let universe = first.universe;
    if let Some(d) = dicts.iter().find(|d| d.universe != universe) {
        return invalid(format!(
            "universe mismatch in merge ({} vs {universe})",
            d.universe
        ));
    }
    let mut cursors: Vec<DictIter<'_>> = dicts.iter().map(|d| d.iter()).collect();
    let mut heads: Vec<Option<u64>> = cursors.iter_mut().map(Iterator::next).collect();
    *work += heads.len() as u64;
    let mut out = DictBuilder::new(universe, first.width)?;
    loop {
        *work += heads.len() as u64;
        let Some(min) = heads.iter().flatten().copied().min() else {
            break;
        };
        out.push(min)?;
        for (head, cursor) in heads.iter_mut().zip(cursors.iter_mut()) {
            if *head == Some(min) {
                *head = cursor.next();
                *work += 1;
            }
        }
    }
    Ok(out.finish())
}
