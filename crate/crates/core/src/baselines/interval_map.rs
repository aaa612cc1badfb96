//! A dynamic run-length sequence over `[0, n)`.
//!
//! The sequence is stored as runs `(start, value)` with strictly increasing
//! starts, the first at 0, and no two adjacent runs sharing a value. Runs
//! are chunked into segments of `[Z/2, Z]` entries (a lone segment may be
//! smaller). Segments are the nodes of an AVL tree keyed by their first
//! start, kept in an arena.
//!
//! Each segment is one bit-packed buffer: entry `j` is `ceil(log2 n)` bits
//! of start followed by `w` bits of value, where `w` is the width of the
//! largest value in that segment. Lookups binary-search the packed starts
//! in place; a mutation decodes its segment, edits it and packs it again.

use std::marker::PhantomData;
use std::mem::size_of;

use crate::codec::dict::ceil_log2;
use crate::error::{invalid, Result};

const NIL: u32 = u32::MAX;

/// Values an [`IntervalMap`] can hold: anything that round-trips through
/// a `u64` of the value's significant width.
pub trait RunValue: Copy + Eq + std::fmt::Debug {
    fn to_bits(self) -> u64;
    fn from_bits(bits: u64) -> Self;
}

macro_rules! run_value {
    ($($t:ty),*) => {$(
        impl RunValue for $t {
            fn to_bits(self) -> u64 {
                u64::from(self)
            }
            fn from_bits(bits: u64) -> Self {
                bits as $t
            }
        }
    )*};
}
run_value!(u8, u16, u32, u64);

#[inline]
fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1 << width) - 1
    }
}

#[inline]
fn get_bits(words: &[u64], pos: usize, width: u32) -> u64 {
    let (i, o) = (pos / 64, (pos % 64) as u32);
    let mut v = words[i] >> o;
    if o + width > 64 {
        v |= words[i + 1] << (64 - o);
    }
    v & mask(width)
}

#[inline]
fn put_bits(words: &mut [u64], pos: usize, width: u32, v: u64) {
    let (i, o) = (pos / 64, (pos % 64) as u32);
    words[i] = (words[i] & !(mask(width) << o)) | (v << o);
    if o + width > 64 {
        let hi = o + width - 64;
        words[i + 1] = (words[i + 1] & !mask(hi)) | (v >> (64 - o));
    }
}

/// `put_bits` into a zeroed field.
#[inline]
fn or_bits(words: &mut [u64], pos: usize, width: u32, v: u64) {
    let (i, o) = (pos / 64, (pos % 64) as u32);
    words[i] |= v << o;
    if o + width > 64 {
        words[i + 1] |= v >> (64 - o);
    }
}

#[derive(Clone, Debug, Default)]
struct Node {
    left: u32,
    right: u32,
    /// First start, duplicated from the buffer so tree walks stay in the
    /// arena.
    key: u32,
    height: u8,
    /// Bits per value in this segment.
    vw: u8,
    len: u16,
    /// Entry capacity of `words`.
    cap: u16,
    words: Box<[u64]>,
}

impl Node {
    fn len(&self) -> usize {
        self.len as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MapCounters {
    /// Entries rewritten inside segments (edits, splits, merges, borrows).
    pub element_steps: u64,
    pub rotations: u64,
    /// Segment buffer reallocations.
    pub resizes: u64,
    pub splits: u64,
    pub merges: u64,
    pub borrows: u64,
    /// Largest number of distinct segments modified by one update.
    pub max_touched: usize,
    /// Largest number of rotations performed by one update.
    pub max_rotations: u64,
}

#[derive(Clone, Debug)]
pub struct IntervalMap<V> {
    n: u64,
    z: usize,
    /// Bits per packed start.
    sw: u32,
    nodes: Vec<Node>,
    free: Vec<u32>,
    root: u32,
    segments: usize,
    runs: u64,
    buffer_bits: u64,
    counters: MapCounters,
    touched: Vec<u32>,
    op_rotations: u64,
    /// Reused decode buffers for the single-segment edit path.
    scratch: (Vec<u32>, Vec<V>),
    _values: PhantomData<V>,
}

/// Largest accepted `Z`; segment lengths and capacities are 16-bit.
pub const MAX_Z: usize = u16::MAX as usize - 1;

impl<V: RunValue> IntervalMap<V> {
    /// One run covering `[0, n)` with `initial`.
    pub fn new(n: u64, z: usize, initial: V) -> Result<Self> {
        if n == 0 || n > 1 << 32 {
            return invalid(format!("universe {n} must be in [1, 2^32]"));
        }
        if !(2..=MAX_Z).contains(&z) {
            return invalid(format!("segment parameter Z must be in [2, {MAX_Z}]"));
        }
        let mut m = Self {
            n,
            z,
            sw: ceil_log2(n).max(1),
            nodes: Vec::new(),
            free: Vec::new(),
            root: NIL,
            segments: 0,
            runs: 1,
            buffer_bits: 0,
            counters: MapCounters::default(),
            touched: Vec::new(),
            op_rotations: 0,
            scratch: (Vec::new(), Vec::new()),
            _values: PhantomData,
        };
        let id = m.new_node(&[0], &[initial]);
        m.root = id;
        Ok(m)
    }

    pub fn universe(&self) -> u64 {
        self.n
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn runs(&self) -> u64 {
        self.runs
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn counters(&self) -> MapCounters {
        self.counters
    }

    pub fn height(&self) -> u32 {
        self.h(self.root) as u32
    }

    /// Segment buffers (allocated words) plus one node record per segment,
    /// the map header and the edit scratch buffers.
    pub fn size_in_bits(&self) -> u64 {
        let node = 8 * size_of::<Node>() as u64;
        let scratch = self.scratch.0.capacity() * size_of::<u32>()
            + self.scratch.1.capacity() * size_of::<V>();
        self.buffer_bits + self.segments as u64 * node + 8 * (size_of::<Self>() + scratch) as u64
    }

    fn entry_bits(&self, id: u32) -> usize {
        (self.sw + u32::from(self.nodes[id as usize].vw)) as usize
    }

    fn start_at(&self, id: u32, j: usize) -> u32 {
        let eb = self.entry_bits(id);
        get_bits(&self.nodes[id as usize].words, j * eb, self.sw) as u32
    }

    fn value_at(&self, id: u32, j: usize) -> V {
        let node = &self.nodes[id as usize];
        let eb = self.entry_bits(id);
        V::from_bits(get_bits(
            &node.words,
            j * eb + self.sw as usize,
            u32::from(node.vw),
        ))
    }

    fn key(&self, id: u32) -> u32 {
        self.nodes[id as usize].key
    }

    fn decode(&self, id: u32) -> (Vec<u32>, Vec<V>) {
        let mut starts = Vec::with_capacity(self.z + 2);
        let mut values = Vec::with_capacity(self.z + 2);
        self.decode_into(id, &mut starts, &mut values);
        (starts, values)
    }

    fn decode_into(&self, id: u32, starts: &mut Vec<u32>, values: &mut Vec<V>) {
        starts.clear();
        values.clear();
        let node = &self.nodes[id as usize];
        let (sw, vw) = (self.sw, u32::from(node.vw));
        let eb = (sw + vw) as usize;
        let mut pos = 0;
        for _ in 0..node.len() {
            starts.push(get_bits(&node.words, pos, sw) as u32);
            values.push(V::from_bits(get_bits(&node.words, pos + sw as usize, vw)));
            pos += eb;
        }
    }

    /// Packs `starts`/`values` into segment `id`, reallocating its buffer
    /// when the capacity policy or the value width calls for it.
    /// Capacity policy: double when full, halve at a quarter, never above
    /// `Z + 1` (a segment briefly holds `Z + 1` entries before it splits).
    fn store(&mut self, id: u32, starts: &[u32], values: &[V]) {
        debug_assert_eq!(starts.len(), values.len());
        let len = starts.len();
        let limit = self.z + 1;
        let vmax = values.iter().map(|v| v.to_bits()).max().unwrap_or(0);
        let vw = (64 - vmax.leading_zeros()).max(1);
        let eb = (self.sw + vw) as usize;
        let node = &self.nodes[id as usize];
        let cap = node.cap as usize;
        let want = if cap == 0 || len > cap {
            len.next_power_of_two().min(limit).max(len)
        } else if len >= cap && cap < limit {
            (2 * cap).min(limit)
        } else if len * 4 <= cap && cap > 1 {
            (cap / 2).max(len).max(1)
        } else {
            cap
        };
        let words = (want * eb).div_ceil(64);
        let old_words = node.words.len();
        let node = &mut self.nodes[id as usize];
        if words != old_words {
            node.words = vec![0u64; words].into_boxed_slice();
            self.buffer_bits = self.buffer_bits + 64 * words as u64 - 64 * old_words as u64;
            self.counters.resizes += 1;
        }
        node.cap = want as u16;
        node.len = len as u16;
        node.key = starts.first().copied().unwrap_or(0);
        node.vw = vw as u8;
        node.words.fill(0);
        let mut pos = 0;
        for (&s, v) in starts.iter().zip(values) {
            or_bits(&mut node.words, pos, self.sw, u64::from(s));
            or_bits(&mut node.words, pos + self.sw as usize, vw, v.to_bits());
            pos += eb;
        }
        self.counters.element_steps += len as u64;
    }

    /// Overwrites one value, repacking the segment only if it is wider
    /// than the segment's current value width.
    fn replace_value(&mut self, id: u32, j: usize, value: V) {
        let bits = value.to_bits();
        let vw = u32::from(self.nodes[id as usize].vw);
        if 64 - bits.leading_zeros() <= vw {
            let pos = j * self.entry_bits(id) + self.sw as usize;
            put_bits(&mut self.nodes[id as usize].words, pos, vw, bits);
            self.counters.element_steps += 1;
        } else {
            let (s, mut v) = self.decode(id);
            v[j] = value;
            self.store(id, &s, &v);
        }
    }

    fn new_node(&mut self, starts: &[u32], values: &[V]) -> u32 {
        let node = Node {
            left: NIL,
            right: NIL,
            height: 1,
            ..Node::default()
        };
        let id = match self.free.pop() {
            Some(id) => {
                self.nodes[id as usize] = node;
                id
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        self.segments += 1;
        self.store(id, starts, values);
        id
    }

    fn free_node(&mut self, id: u32) {
        let node = &mut self.nodes[id as usize];
        self.buffer_bits -= 64 * node.words.len() as u64;
        *node = Node::default();
        self.free.push(id);
        self.segments -= 1;
    }
    fn touch(&mut self, id: u32) {
        if !self.touched.contains(&id) {
            self.touched.push(id);
        }
    }

    fn h(&self, id: u32) -> u8 {
        if id == NIL {
            0
        } else {
            self.nodes[id as usize].height
        }
    }

    fn update_height(&mut self, id: u32) {
        let (l, r) = (self.nodes[id as usize].left, self.nodes[id as usize].right);
        self.nodes[id as usize].height = 1 + self.h(l).max(self.h(r));
    }

    fn rotate_right(&mut self, id: u32) -> u32 {
        let l = self.nodes[id as usize].left;
        self.nodes[id as usize].left = self.nodes[l as usize].right;
        self.nodes[l as usize].right = id;
        self.update_height(id);
        self.update_height(l);
        self.op_rotations += 1;
        l
    }

    fn rotate_left(&mut self, id: u32) -> u32 {
        let r = self.nodes[id as usize].right;
        self.nodes[id as usize].right = self.nodes[r as usize].left;
        self.nodes[r as usize].left = id;
        self.update_height(id);
        self.update_height(r);
        self.op_rotations += 1;
        r
    }

    fn rebalance(&mut self, id: u32) -> u32 {
        self.update_height(id);
        let (l, r) = (self.nodes[id as usize].left, self.nodes[id as usize].right);
        let bf = i32::from(self.h(l)) - i32::from(self.h(r));
        if bf > 1 {
            let (ll, lr) = (self.nodes[l as usize].left, self.nodes[l as usize].right);
            if self.h(ll) < self.h(lr) {
                self.nodes[id as usize].left = self.rotate_left(l);
            }
            return self.rotate_right(id);
        }
        if bf < -1 {
            let (rl, rr) = (self.nodes[r as usize].left, self.nodes[r as usize].right);
            if self.h(rr) < self.h(rl) {
                self.nodes[id as usize].right = self.rotate_right(r);
            }
            return self.rotate_left(id);
        }
        id
    }

    fn tree_insert(&mut self, t: u32, new: u32) -> u32 {
        if t == NIL {
            return new;
        }
        if self.key(new) < self.key(t) {
            let l = self.tree_insert(self.nodes[t as usize].left, new);
            self.nodes[t as usize].left = l;
        } else {
            let r = self.tree_insert(self.nodes[t as usize].right, new);
            self.nodes[t as usize].right = r;
        }
        self.rebalance(t)
    }

    /// Detaches the minimum of subtree `t`; returns (new subtree root, min id).
    fn tree_take_min(&mut self, t: u32) -> (u32, u32) {
        let l = self.nodes[t as usize].left;
        if l == NIL {
            return (self.nodes[t as usize].right, t);
        }
        let (nl, min) = self.tree_take_min(l);
        self.nodes[t as usize].left = nl;
        (self.rebalance(t), min)
    }

    /// Unlinks the node whose key is `key` (the node itself is not freed).
    fn tree_remove(&mut self, t: u32, key: u32) -> u32 {
        assert!(t != NIL, "segment key {key} not in tree");
        let k = self.key(t);
        if key < k {
            let l = self.tree_remove(self.nodes[t as usize].left, key);
            self.nodes[t as usize].left = l;
        } else if key > k {
            let r = self.tree_remove(self.nodes[t as usize].right, key);
            self.nodes[t as usize].right = r;
        } else {
            let (l, r) = (self.nodes[t as usize].left, self.nodes[t as usize].right);
            if l == NIL {
                return r;
            }
            if r == NIL {
                return l;
            }
            let (nr, m) = self.tree_take_min(r);
            self.nodes[m as usize].left = l;
            self.nodes[m as usize].right = nr;
            return self.rebalance(m);
        }
        self.rebalance(t)
    }

    /// Segment holding address `x`.
    fn find(&self, x: u32) -> u32 {
        let (mut t, mut best) = (self.root, NIL);
        while t != NIL {
            if self.key(t) <= x {
                best = t;
                t = self.nodes[t as usize].right;
            } else {
                t = self.nodes[t as usize].left;
            }
        }
        best
    }

    fn predecessor(&self, key: u32) -> u32 {
        let (mut t, mut best) = (self.root, NIL);
        while t != NIL {
            if self.key(t) < key {
                best = t;
                t = self.nodes[t as usize].right;
            } else {
                t = self.nodes[t as usize].left;
            }
        }
        best
    }

    fn successor(&self, key: u32) -> u32 {
        let (mut t, mut best) = (self.root, NIL);
        while t != NIL {
            if self.key(t) > key {
                best = t;
                t = self.nodes[t as usize].left;
            } else {
                t = self.nodes[t as usize].right;
            }
        }
        best
    }

    fn locate(&self, x: u32) -> (u32, usize) {
        let id = self.find(x);
        let (mut lo, mut hi) = (0, self.nodes[id as usize].len());
        // Last entry whose start is <= x; entry 0 always qualifies.
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.start_at(id, mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (id, lo)
    }

    fn check(&self, x: u64) -> Result<u32> {
        if x >= self.n {
            return invalid(format!("address {x} outside [0, {})", self.n));
        }
        Ok(x as u32)
    }

    pub fn get(&self, x: u64) -> Result<V> {
        let x = self.check(x)?;
        let (id, j) = self.locate(x);
        Ok(self.value_at(id, j))
    }

    /// End (exclusive) of the run at `(id, j)`.
    fn run_end(&self, id: u32, j: usize) -> u64 {
        if j + 1 < self.nodes[id as usize].len() {
            return u64::from(self.start_at(id, j + 1));
        }
        match self.successor(self.key(id)) {
            NIL => self.n,
            s => u64::from(self.key(s)),
        }
    }

    fn insert_after(&mut self, x: u32, start: u32, value: V) {
        let (id, j) = self.locate(x);
        self.touch(id);
        let (mut s, mut v) = self.decode(id);
        s.insert(j + 1, start);
        v.insert(j + 1, value);
        self.runs += 1;
        if s.len() > self.z {
            self.split(id, s, v);
        } else {
            self.store(id, &s, &v);
        }
    }

    fn split(&mut self, id: u32, mut starts: Vec<u32>, mut values: Vec<V>) {
        let half = starts.len() / 2;
        let rs = starts.split_off(half);
        let rv = values.split_off(half);
        self.counters.splits += 1;
        self.store(id, &starts, &values);
        let new = self.new_node(&rs, &rv);
        self.touch(new);
        self.root = self.tree_insert(self.root, new);
    }

    fn remove_run(&mut self, start: u32) {
        let (id, j) = self.locate(start);
        debug_assert_eq!(self.start_at(id, j), start);
        self.touch(id);
        self.runs -= 1;
        if self.nodes[id as usize].len() == 1 {
            self.root = self.tree_remove(self.root, start);
            self.free_node(id);
            return;
        }
        let (mut s, mut v) = self.decode(id);
        s.remove(j);
        v.remove(j);
        self.store(id, &s, &v);
        if s.len() < self.z / 2 && self.segments > 1 {
            self.underflow(id);
        }
    }

    /// Merges `id` with a neighbour (preferring its predecessor), or
    /// rebalances the pair when the union would exceed `Z`.
    fn underflow(&mut self, id: u32) {
        let key = self.key(id);
        let (left, right) = match self.predecessor(key) {
            NIL => (id, self.successor(key)),
            p => (p, id),
        };
        self.touch(left);
        self.touch(right);
        let (mut ls, mut lv) = self.decode(left);
        let (mut rs, mut rv) = self.decode(right);
        if ls.len() + rs.len() <= self.z {
            self.counters.merges += 1;
            self.root = self.tree_remove(self.root, rs[0]);
            self.free_node(right);
            ls.append(&mut rs);
            lv.append(&mut rv);
            self.store(left, &ls, &lv);
        } else {
            // The right key moves but stays between its neighbours' keys,
            // so the tree needs no restructuring.
            self.counters.borrows += 1;
            let target = (ls.len() + rs.len()) / 2;
            if ls.len() < target {
                let k = target - ls.len();
                ls.extend(rs.drain(..k));
                lv.extend(rv.drain(..k));
            } else {
                let k = ls.len() - target;
                let at = ls.len() - k;
                rs.splice(0..0, ls.drain(at..));
                rv.splice(0..0, lv.drain(at..));
            }
            self.store(left, &ls, &lv);
            self.store(right, &rs, &rv);
        }
    }

    /// Point update: address `x` takes `value`, splitting and coalescing
    /// runs as needed.
    pub fn set(&mut self, x: u64, value: V) -> Result<()> {
        let x = self.check(x)?;
        let (id, j) = self.locate(x);
        let old = self.value_at(id, j);
        if old == value {
            return Ok(());
        }
        self.touched.clear();
        self.op_rotations = 0;
        let len = self.nodes[id as usize].len();
        if j > 0 && j + 1 < len {
            self.set_within(id, j, x, value);
        } else {
            self.set_general(id, j, x, old, value);
        }
        self.counters.rotations += self.op_rotations;
        self.counters.max_rotations = self.counters.max_rotations.max(self.op_rotations);
        self.counters.max_touched = self.counters.max_touched.max(self.touched.len());
        Ok(())
    }

    /// `set` when run `j` and both its neighbours lie inside segment `id`:
    /// the edit is done on one decoded copy of the segment.
    fn set_within(&mut self, id: u32, j: usize, x: u32, value: V) {
        self.touch(id);
        let (mut s, mut v) = std::mem::take(&mut self.scratch);
        self.decode_into(id, &mut s, &mut v);
        let old = v[j];
        let before = s.len();
        let has_prefix = x > s[j];
        let has_suffix = x + 1 < s[j + 1];
        match (has_prefix, has_suffix) {
            (true, true) => {
                s.splice(j + 1..j + 1, [x, x + 1]);
                v.splice(j + 1..j + 1, [value, old]);
            }
            (true, false) if v[j + 1] == value => s[j + 1] = x,
            (true, false) => {
                s.insert(j + 1, x);
                v.insert(j + 1, value);
            }
            (false, true) if v[j - 1] == value => s[j] = x + 1,
            (false, true) => {
                v[j] = value;
                s.insert(j + 1, x + 1);
                v.insert(j + 1, old);
            }
            (false, false) => {
                v[j] = value;
                if v[j + 1] == value {
                    s.remove(j + 1);
                    v.remove(j + 1);
                }
                if v[j - 1] == value {
                    s.remove(j);
                    v.remove(j);
                }
            }
        }
        self.runs = self.runs + s.len() as u64 - before as u64;
        if s.len() > self.z {
            self.split(id, s, v);
        } else {
            let short = s.len() < self.z / 2;
            self.store(id, &s, &v);
            self.scratch = (s, v);
            if short && self.segments > 1 {
                self.underflow(id);
            }
        }
    }

    /// `set` at a segment boundary, where neighbours may live elsewhere.
    fn set_general(&mut self, id: u32, j: usize, x: u32, old: V, value: V) {
        let start = self.start_at(id, j);
        let end = self.run_end(id, j);
        let has_prefix = x > start;
        let has_suffix = u64::from(x) + 1 < end;

        if has_suffix {
            self.insert_after(x, x + 1, old);
        }
        if has_prefix {
            self.insert_after(x, x, value);
        } else {
            let (id, j) = self.locate(x);
            self.touch(id);
            self.replace_value(id, j, value);
        }
        if !has_suffix && u64::from(x) + 1 < self.n {
            let (id, j) = self.locate(x + 1);
            if self.value_at(id, j) == value {
                self.remove_run(x + 1);
            }
        }
        if !has_prefix && x > 0 {
            let (id, j) = self.locate(x - 1);
            if self.value_at(id, j) == value {
                self.remove_run(x);
            }
        }
    }

    /// Sets every address in `[lo, hi)` to `value` (one run), coalescing
    /// with equal neighbours.
    pub fn set_range(&mut self, lo: u64, hi: u64, value: V) -> Result<()> {
        if lo >= hi || hi > self.n {
            return invalid(format!(
                "range [{lo}, {hi}) invalid for universe {}",
                self.n
            ));
        }
        // Rebuild the run list wholesale; only used for bulk resets.
        let runs = self.to_runs();
        let after = if hi < self.n {
            Some(self.get(hi)?)
        } else {
            None
        };
        let mut out: Vec<(u32, V)> = runs
            .iter()
            .copied()
            .filter(|r| u64::from(r.0) < lo)
            .collect();
        out.push((lo as u32, value));
        if let Some(v) = after {
            out.push((hi as u32, v));
        }
        out.extend(runs.into_iter().filter(|r| u64::from(r.0) > hi));
        self.rebuild_from(out);
        Ok(())
    }

    fn rebuild_from(&mut self, raw: Vec<(u32, V)>) {
        let mut runs: Vec<(u32, V)> = Vec::with_capacity(raw.len());
        for (s, v) in raw {
            match runs.last() {
                Some(&(_, pv)) if pv == v => {}
                _ => runs.push((s, v)),
            }
        }
        self.nodes.clear();
        self.free.clear();
        self.segments = 0;
        self.buffer_bits = 0;
        self.root = NIL;
        self.runs = runs.len() as u64;
        let per = self.z.max(2);
        let count = runs.len().div_ceil(per);
        let base = runs.len() / count;
        let extra = runs.len() % count;
        let mut it = runs.into_iter();
        for c in 0..count {
            let take = base + usize::from(c < extra);
            let (s, v): (Vec<u32>, Vec<V>) = it.by_ref().take(take).unzip();
            let id = self.new_node(&s, &v);
            self.root = self.tree_insert(self.root, id);
        }
    }

    pub fn to_runs(&self) -> Vec<(u32, V)> {
        let mut out = Vec::with_capacity(self.runs as usize);
        self.in_order(self.root, &mut |id| {
            let (s, v) = self.decode(id);
            out.extend(s.into_iter().zip(v));
        });
        out
    }

    fn in_order(&self, t: u32, f: &mut dyn FnMut(u32)) {
        if t == NIL {
            return;
        }
        let node = &self.nodes[t as usize];
        self.in_order(node.left, f);
        f(t);
        self.in_order(node.right, f);
    }

    /// Segment sizes in order (for invariant checks).
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.in_order(self.root, &mut |id| out.push(self.nodes[id as usize].len()));
        out
    }

    /// Checks every structural invariant; returns a description of the
    /// first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let runs = self.to_runs();
        if runs.first().map(|r| r.0) != Some(0) {
            return Err("first run does not start at 0".into());
        }
        for w in runs.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(format!("starts not increasing at {}", w[1].0));
            }
            if w[0].1 == w[1].1 {
                return Err(format!("uncoalesced neighbours at {}", w[1].0));
            }
        }
        if runs.len() as u64 != self.runs {
            return Err("run counter out of sync".into());
        }
        let sizes = self.segment_sizes();
        if sizes.len() != self.segments {
            return Err("segment counter out of sync".into());
        }
        if sizes.len() > 1 && sizes.iter().any(|&s| s < self.z / 2 || s > self.z) {
            return Err(format!("segment sizes out of bounds: {sizes:?}"));
        }
        let bound = 1.45 * ((sizes.len() + 2) as f64).log2();
        if f64::from(self.height()) > bound {
            return Err(format!("height {} above {bound:.2}", self.height()));
        }
        let mut bits = 0;
        self.in_order(self.root, &mut |id| {
            bits += 64 * self.nodes[id as usize].words.len() as u64
        });
        if bits != self.buffer_bits {
            return Err("buffer accounting out of sync".into());
        }
        self.check_avl(self.root).map(|_| ())
    }

    fn check_avl(&self, t: u32) -> std::result::Result<u8, String> {
        if t == NIL {
            return Ok(0);
        }
        let n = &self.nodes[t as usize];
        let l = self.check_avl(n.left)?;
        let r = self.check_avl(n.right)?;
        if l.abs_diff(r) > 1 || n.height != 1 + l.max(r) {
            return Err(format!("AVL violation at key {}", self.key(t)));
        }
        Ok(n.height)
    }

    /// One `start value` line per run.
    pub fn to_text(&self) -> String {
        self.to_runs()
            .iter()
            .map(|(s, v)| format!("{s} {v:?}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_split() {
        let mut m = IntervalMap::new(16, 20, 0u32).unwrap();
        m.set(5, 1).unwrap();
        assert_eq!(m.to_runs(), vec![(0, 0), (5, 1), (6, 0)]);
        m.set(5, 0).unwrap();
        assert_eq!(m.to_runs(), vec![(0, 0)]);
    }

    #[test]
    fn bit_packing_round_trips() {
        let mut w = vec![0u64; 4];
        let mut pos = 0;
        let vals = [
            (13u32, 5000u64),
            (7, 1),
            (33, u32::MAX as u64),
            (1, 0),
            (64, u64::MAX >> 3),
        ];
        for &(width, v) in &vals {
            put_bits(&mut w, pos, width, v & mask(width));
            pos += width as usize;
        }
        pos = 0;
        for &(width, v) in &vals {
            assert_eq!(get_bits(&w, pos, width), v & mask(width));
            pos += width as usize;
        }
    }

    #[test]
    fn value_width_follows_segment_maximum() {
        let mut m = IntervalMap::new(1 << 10, 20, 0u64).unwrap();
        for x in [9, 200, 9, 200] {
            let v = m.get(x).unwrap();
            m.set(x, v ^ 1).unwrap();
        }
        let small = m.size_in_bits();
        m.set(3, 1 << 40).unwrap();
        assert_eq!(m.get(3).unwrap(), 1 << 40);
        assert!(m.size_in_bits() > small);
        m.set(3, 0).unwrap();
        assert_eq!(m.size_in_bits(), small);
        m.validate().unwrap();
    }

    #[test]
    fn edges_coalesce() {
        let mut m = IntervalMap::new(4, 4, 0u8).unwrap();
        m.set(0, 2).unwrap();
        m.set(3, 2).unwrap();
        assert_eq!(m.to_runs(), vec![(0, 2), (1, 0), (3, 2)]);
        m.set(1, 2).unwrap();
        m.set(2, 2).unwrap();
        assert_eq!(m.to_runs(), vec![(0, 2)]);
        assert!(m.set(4, 1).is_err());
        assert!(m.get(4).is_err());
    }

    #[test]
    fn set_range_resets() {
        let mut m = IntervalMap::new(32, 4, 0u8).unwrap();
        for i in (0..32).step_by(3) {
            m.set(i, 1).unwrap();
        }
        m.set_range(4, 20, 7).unwrap();
        m.validate().unwrap();
        for i in 0..32u64 {
            let want = if (4..20).contains(&i) {
                7
            } else if i % 3 == 0 {
                1
            } else {
                0
            };
            assert_eq!(m.get(i).unwrap(), want, "at {i}");
        }
        m.set_range(0, 32, 3).unwrap();
        assert_eq!(m.to_runs(), vec![(0, 3)]);
    }

    fn random_ops(n: u64, z: usize, ops: usize, alphabet: u32, seed: u64) {
        let mut m = IntervalMap::new(n, z, 0u32).unwrap();
        let mut oracle = vec![0u32; n as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..ops {
            let x = rng.random_range(0..n);
            let v = rng.random_range(0..alphabet);
            m.set(x, v).unwrap();
            oracle[x as usize] = v;
            if i % 97 == 0 {
                m.validate().unwrap();
                let y = rng.random_range(0..n);
                assert_eq!(m.get(y).unwrap(), oracle[y as usize]);
            }
        }
        m.validate().unwrap();
        for x in 0..n {
            assert_eq!(m.get(x).unwrap(), oracle[x as usize]);
        }
        let c = m.counters();
        assert!(c.max_touched <= 3, "touched {}", c.max_touched);
        assert!(c.max_rotations <= u64::from(m.height()) + 2);
    }

    #[test]
    fn matches_dense_oracle() {
        random_ops(5000, 20, 100_000, 3, 1);
        random_ops(300, 4, 20_000, 2, 2);
        random_ops(1000, 2, 20_000, 5, 3);
        random_ops(1000, 7, 20_000, 1000, 4);
    }

    #[test]
    fn capacity_stays_bounded() {
        let mut m = IntervalMap::new(1 << 12, 20, 0u32).unwrap();
        for i in (0..1 << 12).step_by(2) {
            m.set(i, 1).unwrap();
        }
        assert_eq!(m.runs(), 1 << 12);
        for n in &m.nodes {
            if n.len > 0 {
                assert!(n.cap as usize <= 21 && n.len <= n.cap);
                let bits = n.cap as usize * (m.sw as usize + n.vw as usize);
                assert_eq!(n.words.len(), bits.div_ceil(64));
            }
        }
        m.validate().unwrap();
        for i in (0..1 << 12).step_by(2) {
            m.set(i, 0).unwrap();
        }
        assert_eq!(m.runs(), 1);
        assert_eq!(m.segments(), 1);
        m.validate().unwrap();
    }
}
