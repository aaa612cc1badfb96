//! The Rank ORAM client.
//!
//! Levels `0..=L` with `n = 2^L`. Level `l` is a permuted array of `2 * 2^l`
//! slots: the real block of rank `r` in `Φ_l` sits at `π_l(r)` (at the top
//! level the block for address `a` sits at `π_L(a)`), and dummy probes walk
//! `π_l(dummyCntr_l), π_l(dummyCntr_l + 1), ...`. Levels `0..=k` live in
//! client memory and are invisible to the server; every occupied server
//! level receives exactly one probe per access, all in a single batch.
//!
//! After each access the counter advances and the smallest empty level
//! `l = 1 + trailing_zeros(count)` (the top level once that reaches `L`) is
//! rebuilt from the untouched contents of all levels below it.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::cipher::{
    ciphertext_width, decrypt_block, make_dummy, Block, Ciphertext, Context, Key,
};
use crate::crypto::prp::Prp;
use crate::error::{invalid, protocol, Result};
use crate::hist::HistoricalMembership;
use crate::server::{Area, LogMode, Phase, ServerStats, ServerStore, StoreMode};
use crate::shuffle::{
    naive_dummy_shuffle, short_queue_shuffle, Output, ShuffleParams, ShuffleReport, Source,
    DEFAULT_C,
};
use crate::Error;

#[derive(Clone, Debug)]
pub struct OramConfig {
    /// Number of blocks; must be a power of two, at least 2.
    pub n: u64,
    /// Payload bytes per block.
    pub block_size: usize,
    /// Levels `1..=k` are kept client-side. `None` means `L / 2`.
    pub client_levels: Option<u32>,
    pub xor_mode: bool,
    pub seed: u64,
    pub store: StoreMode,
    pub delete_on_read: bool,
    pub log: LogMode,
    pub shuffle_c: f64,
    /// Keep a per-access [`AccessShape`] record.
    pub record_shape: bool,
    /// Fault injection for audits: dummy probes stop advancing the counter.
    pub freeze_dummy_counter: bool,
}

impl OramConfig {
    pub fn new(n: u64, block_size: usize) -> Self {
        Self {
            n,
            block_size,
            client_levels: None,
            xor_mode: false,
            seed: 0,
            store: StoreMode::Memory,
            delete_on_read: false,
            log: LogMode::Full,
            shuffle_c: DEFAULT_C,
            record_shape: false,
            freeze_dummy_counter: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessResult {
    /// Payload held before this access (for writes, the overwritten value).
    pub data: Vec<u8>,
    pub online_down: u64,
    pub online_up: u64,
    pub offline_down: u64,
    pub offline_up: u64,
    pub round_trips: u64,
    pub rebuild_target: u32,
}

/// What the server can see of one access, minus slot values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct AccessShape {
    pub probed: Vec<u32>,
    pub target: u32,
    pub online_down: u64,
    pub offline_down: u64,
    pub offline_up: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OramStats {
    pub n: u64,
    pub levels: u32,
    pub client_levels: u32,
    pub accesses: u64,
    pub server: ServerStats,
    /// Rebuild count indexed by target level.
    pub rebuilds: Vec<u64>,
    pub shuffle_jobs: u64,
    pub shuffle_retries: u64,
    pub peak_queue: usize,
    /// Peak shuffle working set in bits.
    pub block_buffer_bits: u64,
    pub peak_hist_bits: u64,
    pub peak_client_bits: u64,
}

impl OramStats {
    pub fn online_per_access(&self) -> f64 {
        (self.server.online_down + self.server.online_up) as f64 / self.accesses.max(1) as f64
    }

    pub fn offline_per_access(&self) -> f64 {
        (self.server.offline_down + self.server.offline_up) as f64 / self.accesses.max(1) as f64
    }

    pub fn total_per_access(&self) -> f64 {
        self.server.total_excluding_setup() as f64 / self.accesses.max(1) as f64
    }
}

#[derive(Clone, Debug)]
struct LevelState {
    prp: Prp,
    epoch: u64,
    dummy_cntr: u64,
    occupied: bool,
}

/// Bits of per-level client metadata: PRP seed, epoch and dummy counter.
const LEVEL_META_BITS: u64 = 128 + 64 + 64;

pub struct RankOram {
    cfg: OramConfig,
    depth: u32,
    k: u32,
    key: Key,
    rng: ChaCha20Rng,
    hist: HistoricalMembership,
    levels: Vec<LevelState>,
    resident: Vec<HashMap<u64, Vec<u8>>>,
    server: ServerStore,
    count: u64,
    jobs: u64,
    stats: OramStats,
    shapes: Vec<AccessShape>,
}

fn fresh_seed(rng: &mut ChaCha20Rng) -> [u8; 16] {
    let mut s = [0u8; 16];
    rng.fill_bytes(&mut s);
    s
}

/// Rebuild target after the access that made the counter `count`.
pub fn rebuild_target(count: u64, depth: u32) -> u32 {
    if count == 0 {
        depth
    } else {
        (count.trailing_zeros() + 1).min(depth)
    }
}

impl RankOram {
    pub fn new(cfg: OramConfig) -> Result<Self> {
        if cfg.n < 2 || !cfg.n.is_power_of_two() {
            return invalid(format!("n = {} must be a power of two >= 2", cfg.n));
        }
        if cfg.block_size == 0 {
            return invalid("block size must be positive");
        }
        let depth = cfg.n.trailing_zeros();
        let k = cfg.client_levels.unwrap_or(depth / 2);
        if k >= depth {
            return invalid(format!("client levels {k} must be below L = {depth}"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let key = Key::new(fresh_seed(&mut rng));
        let levels = (0..=depth)
            .map(|l| {
                Ok(LevelState {
                    prp: Prp::new(2 << l, fresh_seed(&mut rng))?,
                    epoch: 0,
                    dummy_cntr: 0,
                    occupied: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut server = ServerStore::new(ciphertext_width(cfg.block_size), cfg.store.clone())?;
        server.set_log_mode(cfg.log);
        let mut oram = Self {
            hist: HistoricalMembership::new(cfg.n)?,
            depth,
            k,
            key,
            rng,
            levels,
            resident: vec![HashMap::new(); k as usize + 1],
            server,
            count: 0,
            jobs: 0,
            stats: OramStats {
                n: cfg.n,
                levels: depth,
                client_levels: k,
                rebuilds: vec![0; depth as usize + 1],
                ..Default::default()
            },
            shapes: Vec::new(),
            cfg,
        };
        oram.initialize()?;
        oram.server.set_delete_on_read(oram.cfg.delete_on_read);
        Ok(oram)
    }

    /// Loads all `n` zero blocks into the top level.
    fn initialize(&mut self) -> Result<()> {
        let top = self.depth;
        let n = self.cfg.n;
        let b = self.cfg.block_size;
        self.server.set_phase(Phase::Setup);
        self.server.allocate(Area::Level(top), 2 * n)?;
        let st = &self.levels[top as usize];
        for slot in 0..2 * n {
            let r = st.prp.invert(slot)?;
            let ct = if r < n {
                crate::crypto::cipher::encrypt_block(
                    &self.key,
                    Context::new(top, st.epoch, slot),
                    &Block::real(r, vec![0; b]),
                )
            } else {
                make_dummy(&self.key, top, st.epoch, slot, b)
            };
            self.server.write_slot(Area::Level(top), slot, &ct)?;
        }
        self.server.set_phase(Phase::Offline);
        let st = &mut self.levels[top as usize];
        st.dummy_cntr = n;
        st.occupied = true;
        self.update_peak(0);
        Ok(())
    }

    pub fn config(&self) -> &OramConfig {
        &self.cfg
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn client_levels(&self) -> u32 {
        self.k
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn hist(&self) -> &HistoricalMembership {
        &self.hist
    }

    pub fn server(&self) -> &ServerStore {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut ServerStore {
        &mut self.server
    }

    pub fn shapes(&self) -> &[AccessShape] {
        &self.shapes
    }

    pub fn dummy_counter(&self, l: u32) -> u64 {
        self.levels[l as usize].dummy_cntr
    }

    pub fn epoch(&self, l: u32) -> u64 {
        self.levels[l as usize].epoch
    }

    /// Occupied levels that live on the server, ascending.
    pub fn server_levels(&self) -> Vec<u32> {
        (self.k + 1..=self.depth)
            .filter(|&l| self.levels[l as usize].occupied)
            .collect()
    }

    pub fn occupied_levels(&self) -> Vec<u32> {
        (1..=self.depth)
            .filter(|&l| {
                self.levels[l as usize].occupied
                    || (l <= self.k && !self.resident[l as usize].is_empty())
            })
            .collect()
    }

    pub fn stats(&self) -> OramStats {
        let mut s = self.stats.clone();
        s.server = self.server.stats();
        s
    }

    fn resident_bits(&self) -> u64 {
        let per = 64 + 8 * self.cfg.block_size as u64;
        self.resident.iter().map(|m| m.len() as u64 * per).sum()
    }

    fn update_peak(&mut self, buffer_bits: u64) {
        let hist = self.hist.size_in_bits();
        self.stats.peak_hist_bits = self.stats.peak_hist_bits.max(hist);
        let total =
            hist + self.resident_bits() + LEVEL_META_BITS * (self.depth as u64 + 1) + buffer_bits;
        self.stats.peak_client_bits = self.stats.peak_client_bits.max(total);
    }

    pub fn read(&mut self, a: u64) -> Result<Vec<u8>> {
        Ok(self.access(a, OpKind::Read, None)?.data)
    }

    pub fn write(&mut self, a: u64, data: Vec<u8>) -> Result<Vec<u8>> {
        Ok(self.access(a, OpKind::Write, Some(data))?.data)
    }

    pub fn access(&mut self, a: u64, op: OpKind, data: Option<Vec<u8>>) -> Result<AccessResult> {
        if a >= self.cfg.n {
            return invalid(format!("address {a} outside [0, {})", self.cfg.n));
        }
        let new_data = match (op, data) {
            (OpKind::Write, Some(d)) if d.len() == self.cfg.block_size => Some(d),
            (OpKind::Write, _) => {
                return invalid("write needs a payload of exactly block_size bytes")
            }
            (OpKind::Read, _) => None,
        };
        let before = self.server.stats();
        let (target_level, pos) = self.hist.locate(a);

        let mut batch = Vec::new();
        let mut dummies = Vec::new();
        let mut real_probe = None;
        for l in self.server_levels() {
            let st = &mut self.levels[l as usize];
            let slot = if l == target_level {
                let slot = st.prp.eval(pos)?;
                real_probe = Some((batch.len(), Context::new(l, st.epoch, slot)));
                slot
            } else {
                let slot = st.prp.eval(st.dummy_cntr)?;
                if !self.cfg.freeze_dummy_counter {
                    st.dummy_cntr += 1;
                }
                dummies.push((l, st.epoch, slot));
                slot
            };
            batch.push((Area::Level(l), slot));
        }
        let probed: Vec<u32> = batch
            .iter()
            .map(|(area, _)| match area {
                Area::Level(l) => *l,
                _ => unreachable!(),
            })
            .collect();

        let fetched = if self.cfg.xor_mode {
            let mut folded = self.server.xor_batch(&batch)?;
            for &(l, t, slot) in &dummies {
                folded.xor_in(&make_dummy(&self.key, l, t, slot, self.cfg.block_size));
            }
            match real_probe {
                Some((_, ctx)) => Some(decrypt_block(&self.key, ctx, &folded)?),
                None if folded.as_bytes().iter().all(|&b| b == 0) => None,
                None => return protocol("XOR reply does not cancel to zero"),
            }
        } else {
            let mut reply = self.server.read_batch(&batch)?;
            match real_probe {
                Some((i, ctx)) => {
                    let ct = std::mem::replace(&mut reply[i], Ciphertext::zeroed(0));
                    Some(decrypt_block(&self.key, ctx, &ct)?)
                }
                None => None,
            }
        };

        let old = match fetched {
            Some(block) => {
                if block.address() != Some(a) {
                    return protocol(format!("probe for {a} returned {:?}", block.tag));
                }
                block.payload
            }
            None => {
                if target_level > self.k {
                    return protocol(format!("no probe issued for server level {target_level}"));
                }
                match self.resident[target_level as usize].remove(&a) {
                    Some(p) => p,
                    None => {
                        return protocol(format!(
                            "address {a} missing from client level {target_level}"
                        ))
                    }
                }
            }
        };
        let stored = new_data.unwrap_or_else(|| old.clone());
        self.resident[0].insert(a, stored);
        self.hist.insert_into_level0(a)?;
        self.stats.accesses += 1;

        self.count = (self.count + 1) & (self.cfg.n - 1);
        let target = rebuild_target(self.count, self.depth);
        let mid = self.server.stats();
        self.rebuild(target)?;
        let after = self.server.stats();
        self.update_peak(0);

        if self.cfg.record_shape {
            self.shapes.push(AccessShape {
                probed,
                target,
                online_down: mid.online_down - before.online_down,
                offline_down: after.offline_down - mid.offline_down,
                offline_up: after.offline_up - mid.offline_up,
            });
        }
        Ok(AccessResult {
            data: old,
            online_down: mid.online_down - before.online_down,
            online_up: mid.online_up - before.online_up,
            offline_down: after.offline_down - mid.offline_down,
            offline_up: after.offline_up - mid.offline_up,
            round_trips: mid.online_round_trips - before.online_round_trips,
            rebuild_target: target,
        })
    }

    /// Untouched contents of level `i`, in ascending slot order.
    fn evict(&self, i: u32, out: &mut Vec<Source>) -> Result<()> {
        if i <= self.k {
            let mut reals: Vec<(&u64, &Vec<u8>)> = self.resident[i as usize]
                .iter()
                .filter(|(a, _)| self.hist.level(**a) == i)
                .collect();
            reals.sort_unstable_by_key(|(a, _)| **a);
            out.extend(
                reals
                    .into_iter()
                    .map(|(a, p)| Source::Local(Block::real(*a, p.clone()))),
            );
            return Ok(());
        }
        let st = &self.levels[i as usize];
        let (reals, dict) = if i == self.depth {
            (self.cfg.n, None)
        } else {
            (self.hist.level_len(i), self.hist.dictionary(i))
        };
        for slot in 0..2u64 << i {
            let r = st.prp.invert(slot)?;
            let untouched = if r < reals {
                let a = match dict {
                    Some(d) => d.index(r)?,
                    None => r,
                };
                self.hist.level(a) == i
            } else {
                r >= st.dummy_cntr
            };
            if untouched {
                out.push(Source::Server {
                    area: Area::Level(i),
                    slot,
                    ctx: Context::new(i, st.epoch, slot),
                });
            }
        }
        Ok(())
    }

    fn rebuild(&mut self, l: u32) -> Result<()> {
        let mut sources = Vec::new();
        let mut evicted = Vec::new();
        for i in 0..l {
            if i == 0 || self.levels[i as usize].occupied || i <= self.k {
                self.evict(i, &mut sources)?;
                evicted.push(i);
            }
        }
        if l == self.depth {
            self.evict(l, &mut sources)?;
        }

        if l == self.depth {
            self.hist.merge_into_top();
        } else {
            self.hist.merge_levels(l)?;
        }
        self.stats.rebuilds[l as usize] += 1;
        let seed = fresh_seed(&mut self.rng);
        {
            let st = &mut self.levels[l as usize];
            st.prp = Prp::new(2 << l, seed)?;
            st.epoch += 1;
            st.dummy_cntr = if l == self.depth {
                self.cfg.n
            } else {
                self.hist.level_len(l)
            };
            st.occupied = true;
        }

        if l <= self.k {
            let mut table = HashMap::with_capacity(sources.len());
            for s in sources {
                if let Source::Local(b) = s {
                    let a = b.address().expect("client levels hold reals only");
                    table.insert(a, b.payload);
                }
            }
            self.resident[l as usize] = table;
        } else {
            let report = self.build_server_level(l, &sources)?;
            self.stats.shuffle_jobs += 1;
            self.stats.peak_queue = self.stats.peak_queue.max(report.peak_queue);
            let buffer = report.peak_buffer as u64 * 8 * self.server.record_width() as u64;
            self.stats.block_buffer_bits = self.stats.block_buffer_bits.max(buffer);
            self.update_peak(buffer);
            self.server.promote(Area::Staging, Area::Level(l))?;
        }

        for i in evicted {
            if i <= self.k {
                self.resident[i as usize].clear();
            } else {
                self.server.drop_area(Area::Level(i))?;
            }
            self.levels[i as usize].occupied = false;
        }
        Ok(())
    }

    fn build_server_level(&mut self, l: u32, sources: &[Source]) -> Result<ShuffleReport> {
        let st = &self.levels[l as usize];
        let out = Output {
            area: Area::Staging,
            level: l,
            epoch: st.epoch,
        };
        let top = l == self.depth;
        let prp = st.prp.clone();
        let dict = self.hist.dictionary(l).cloned();
        let dest = move |a: u64| -> Result<u64> {
            match (&dict, top) {
                (_, true) => prp.eval(a),
                (Some(d), false) => prp.eval(d.rank(a)),
                (None, false) => unreachable!("non-top level without dictionary"),
            }
        };
        let n = 1u64 << l;
        let all_local = sources.iter().all(|s| matches!(s, Source::Local(_)));
        if all_local {
            return naive_dummy_shuffle(
                &mut self.server,
                &self.key,
                self.cfg.block_size,
                sources,
                n,
                &dest,
                out,
            );
        }
        for attempt in 0..2 {
            self.jobs += 1;
            let params = ShuffleParams {
                c: self.cfg.shuffle_c,
                seed: self.rng.next_u64(),
                temp_epoch: self.jobs,
            };
            match short_queue_shuffle(
                &mut self.server,
                &self.key,
                self.cfg.block_size,
                sources,
                n,
                &dest,
                out,
                &params,
            ) {
                Err(Error::ShuffleFailure { .. }) if attempt == 0 => {
                    self.stats.shuffle_retries += 1;
                }
                other => return other,
            }
        }
        unreachable!("second attempt always returns")
    }
}
