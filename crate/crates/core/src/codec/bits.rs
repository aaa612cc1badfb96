//! Append-only bit sequences, packed MSB-first into 64-bit words.

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitStream {
    words: Vec<u64>,
    len: u64,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_raw(words: Vec<u64>, len: u64) -> Option<Self> {
        if words.len() as u64 != len.div_ceil(64) {
            return None;
        }
        Some(Self { words, len })
    }

    /// Number of bits appended so far.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn push_bit(&mut self, bit: bool) {
        self.push_bits(bit as u64, 1);
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        if width == 0 {
            return;
        }
        let value = if width == 64 {
            value
        } else {
            value & ((1u64 << width) - 1)
        };
        let used = (self.len % 64) as u32;
        if used == 0 {
            self.words.push(value << (64 - width));
        } else {
            let free = 64 - used;
            let last = self.words.last_mut().expect("partial word exists");
            if width <= free {
                *last |= value << (free - width);
            } else {
                let spill = width - free;
                *last |= value >> spill;
                self.words.push(value << (64 - spill));
            }
        }
        self.len += width as u64;
    }

    /// Appends `count` zero bits.
    pub fn push_zeros(&mut self, mut count: u64) {
        while count > 0 {
            let chunk = count.min(64) as u32;
            self.push_bits(0, chunk);
            count -= chunk as u64;
        }
    }

    pub fn get(&self, pos: u64) -> Option<bool> {
        if pos >= self.len {
            return None;
        }
        let word = self.words[(pos / 64) as usize];
        Some((word >> (63 - pos % 64)) & 1 == 1)
    }

    /// The 64 bits starting at `pos`, left-aligned; bits past the end read as 0.
    #[inline]
    pub(crate) fn peek64(&self, pos: u64) -> u64 {
        let idx = (pos / 64) as usize;
        let shift = (pos % 64) as u32;
        let hi = self.words.get(idx).copied().unwrap_or(0);
        if shift == 0 {
            hi
        } else {
            let lo = self.words.get(idx + 1).copied().unwrap_or(0);
            (hi << shift) | (lo >> (64 - shift))
        }
    }

    pub fn reader(&self) -> BitReader<'_> {
        self.reader_at(0)
    }

    pub fn reader_at(&self, pos: u64) -> BitReader<'_> {
        BitReader { stream: self, pos }
    }
}

#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    stream: &'a BitStream,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.stream.len.saturating_sub(self.pos)
    }

    pub fn read_bit(&mut self) -> Option<bool> {
        let bit = self.stream.get(self.pos)?;
        self.pos += 1;
        Some(bit)
    }

    /// Reads `width` bits (at most 64) as an unsigned integer.
    pub fn read_bits(&mut self, width: u32) -> Option<u64> {
        debug_assert!(width <= 64);
        if width == 0 {
            return Some(0);
        }
        if self.remaining() < width as u64 {
            return None;
        }
        let value = self.stream.peek64(self.pos) >> (64 - width);
        self.pos += width as u64;
        Some(value)
    }

    /// Counts and consumes zero bits up to the next one bit, which is left
    /// unread. Returns `None` if the stream ends first.
    pub fn read_zero_run(&mut self) -> Option<u32> {
        let mut run = 0u32;
        loop {
            if self.remaining() == 0 {
                return None;
            }
            let window = self.stream.peek64(self.pos);
            let avail = self.remaining().min(64) as u32;
            let lz = window.leading_zeros().min(avail);
            run += lz;
            self.pos += lz as u64;
            if lz < avail {
                return Some(run);
            }
        }
    }
}
