//! The simulated untrusted server.
//!
//! Holds opaque fixed-width ciphertext slots grouped into areas (one per
//! hierarchy level, a scratch area for shuffles and a staging area for
//! rebuilt levels) and records every slot touch. The server never decrypts;
//! its only computation is XOR-folding a probe batch when asked to.
//!
//! Bandwidth is counted in blocks. Online traffic is what happens during
//! `read_batch`/`xor_batch`; everything else is offline (rebuild) traffic,
//! except writes issued while the phase is [`Phase::Setup`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::crypto::cipher::Ciphertext;
use crate::error::{invalid, protocol, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Area {
    Level(u32),
    Temp,
    Staging,
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Area::Level(l) => write!(f, "L{l}"),
            Area::Temp => f.write_str("temp"),
            Area::Staging => f.write_str("staging"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    /// Offline slot download.
    Read,
    /// Online slot download inside a batch.
    Probe,
    /// Slot folded into an XOR reply (no transfer of its own).
    Xprobe,
    /// The single folded block returned for an XOR batch.
    Xreply,
    Write,
    Alloc,
    Drop,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Read => "read",
            Op::Probe => "probe",
            Op::Xprobe => "xprobe",
            Op::Xreply => "xreply",
            Op::Write => "write",
            Op::Alloc => "alloc",
            Op::Drop => "drop",
        }
    }

    pub fn is_download(self) -> bool {
        matches!(self, Op::Read | Op::Probe | Op::Xreply)
    }
}

/// One slot touch. `epoch` is the server-side generation of the area: it
/// advances every time the area is (re)allocated or replaced by a promote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct LogEntry {
    pub op: Op,
    pub area: Area,
    pub slot: u64,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LogMode {
    #[default]
    Full,
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Phase {
    Setup,
    #[default]
    Offline,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ServerStats {
    pub online_down: u64,
    pub online_up: u64,
    pub offline_down: u64,
    pub offline_up: u64,
    pub setup_up: u64,
    pub online_round_trips: u64,
    pub offline_round_trips: u64,
}

impl ServerStats {
    pub fn down(&self) -> u64 {
        self.online_down + self.offline_down
    }

    pub fn up(&self) -> u64 {
        self.online_up + self.offline_up + self.setup_up
    }

    /// Online plus offline blocks, excluding the initial load.
    pub fn total_excluding_setup(&self) -> u64 {
        self.online_down + self.online_up + self.offline_down + self.offline_up
    }
}

#[derive(Clone, Debug)]
pub enum StoreMode {
    Memory,
    /// One `<area>.dat` file of fixed-width records per area under the directory.
    Disk(PathBuf),
}

enum Slots {
    Memory(Vec<Option<Vec<u8>>>),
    Disk {
        file: File,
        path: PathBuf,
        len: u64,
        deleted: Vec<bool>,
    },
}

struct AreaState {
    slots: Slots,
    epoch: u64,
}

impl AreaState {
    fn width(&self) -> u64 {
        match &self.slots {
            Slots::Memory(v) => v.len() as u64,
            Slots::Disk { len, .. } => *len,
        }
    }
}

pub struct ServerStore {
    record: usize,
    mode: StoreMode,
    areas: BTreeMap<Area, AreaState>,
    epochs: BTreeMap<Area, u64>,
    log_mode: LogMode,
    log: Vec<LogEntry>,
    stats: ServerStats,
    phase: Phase,
    delete_on_read: bool,
}

fn file_name(area: Area) -> String {
    match area {
        Area::Level(l) => format!("level_{l}.dat"),
        Area::Temp => "temp.dat".into(),
        Area::Staging => "staging.dat".into(),
    }
}

impl ServerStore {
    /// A store whose slots each hold one ciphertext of `record` bytes.
    pub fn new(record: usize, mode: StoreMode) -> Result<Self> {
        if record == 0 {
            return invalid("record width must be positive");
        }
        if let StoreMode::Disk(dir) = &mode {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            record,
            mode,
            areas: BTreeMap::new(),
            epochs: BTreeMap::new(),
            log_mode: LogMode::Full,
            log: Vec::new(),
            stats: ServerStats::default(),
            phase: Phase::Offline,
            delete_on_read: false,
        })
    }

    pub fn in_memory(record: usize) -> Self {
        Self::new(record, StoreMode::Memory).expect("positive record width")
    }

    pub fn set_log_mode(&mut self, mode: LogMode) {
        self.log_mode = mode;
    }

    /// When set, every downloaded slot is erased; reading it again is a
    /// protocol error.
    pub fn set_delete_on_read(&mut self, on: bool) {
        self.delete_on_read = on;
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn record_width(&self) -> usize {
        self.record
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    pub fn access_log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    pub fn width(&self, area: Area) -> Option<u64> {
        self.areas.get(&area).map(AreaState::width)
    }

    pub fn epoch(&self, area: Area) -> Option<u64> {
        self.areas.get(&area).map(|a| a.epoch)
    }

    fn push_log(&mut self, op: Op, area: Area, slot: u64, epoch: u64) {
        if self.log_mode == LogMode::Full {
            self.log.push(LogEntry {
                op,
                area,
                slot,
                epoch,
            });
        }
    }

    fn next_epoch(&mut self, area: Area) -> u64 {
        let e = self.epochs.entry(area).or_insert(0);
        *e += 1;
        *e
    }

    /// Creates (or replaces) `area` with `width` empty slots.
    pub fn allocate(&mut self, area: Area, width: u64) -> Result<()> {
        self.release(area)?;
        let slots = match &self.mode {
            StoreMode::Memory => Slots::Memory(vec![None; width as usize]),
            StoreMode::Disk(dir) => {
                let path = dir.join(file_name(area));
                let file = OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create(true)
                    .truncate(true)
                    .open(&path)?;
                file.set_len(width * self.record as u64)?;
                Slots::Disk {
                    file,
                    path,
                    len: width,
                    deleted: vec![true; width as usize],
                }
            }
        };
        let epoch = self.next_epoch(area);
        self.areas.insert(area, AreaState { slots, epoch });
        self.push_log(Op::Alloc, area, width, epoch);
        Ok(())
    }

    fn release(&mut self, area: Area) -> Result<()> {
        if let Some(AreaState {
            slots: Slots::Disk { path, .. },
            ..
        }) = self.areas.remove(&area)
        {
            std::fs::remove_file(path)?;
        }
        Ok(())
    }

    /// Discards an area. The log keeps a `drop` marker so audits can tell
    /// epochs apart.
    pub fn drop_area(&mut self, area: Area) -> Result<()> {
        let Some(epoch) = self.epoch(area) else {
            return protocol(format!("drop of unallocated area {area}"));
        };
        self.release(area)?;
        self.push_log(Op::Drop, area, 0, epoch);
        Ok(())
    }

    /// Replaces `to` by the contents of `from`, which disappears. Counts as
    /// a fresh epoch of `to`; no blocks move over the interface.
    pub fn promote(&mut self, from: Area, to: Area) -> Result<()> {
        let Some(mut state) = self.areas.remove(&from) else {
            return protocol(format!("promote of unallocated area {from}"));
        };
        self.push_log(Op::Drop, from, 0, state.epoch);
        self.release(to)?;
        if let (StoreMode::Disk(dir), Slots::Disk { path, .. }) = (&self.mode, &mut state.slots) {
            let target = dir.join(file_name(to));
            std::fs::rename(&*path, &target)?;
            *path = target;
        }
        let width = state.width();
        state.epoch = self.next_epoch(to);
        self.push_log(Op::Alloc, to, width, state.epoch);
        self.areas.insert(to, state);
        Ok(())
    }

    fn state(&self, area: Area, slot: u64) -> Result<&AreaState> {
        let Some(state) = self.areas.get(&area) else {
            return protocol(format!("unknown area {area}"));
        };
        if slot >= state.width() {
            return protocol(format!(
                "slot {slot} out of range for {area} (width {})",
                state.width()
            ));
        }
        Ok(state)
    }

    fn fetch(&mut self, area: Area, slot: u64) -> Result<(Ciphertext, u64)> {
        let record = self.record;
        let delete = self.delete_on_read;
        let epoch = self.state(area, slot)?.epoch;
        let state = self.areas.get_mut(&area).expect("checked above");
        let bytes = match &mut state.slots {
            Slots::Memory(v) => {
                let cell = &mut v[slot as usize];
                if delete {
                    cell.take()
                } else {
                    cell.clone()
                }
            }
            Slots::Disk { file, deleted, .. } => {
                if deleted[slot as usize] {
                    None
                } else {
                    let mut buf = vec![0; record];
                    file.read_exact_at(&mut buf, slot * record as u64)?;
                    deleted[slot as usize] = delete;
                    Some(buf)
                }
            }
        };
        match bytes {
            Some(b) => Ok((Ciphertext(b), epoch)),
            None => protocol(format!("read of empty slot {slot} in {area}")),
        }
    }

    /// Uploads one ciphertext.
    pub fn write_slot(&mut self, area: Area, slot: u64, ct: &Ciphertext) -> Result<()> {
        if ct.len() != self.record {
            return protocol(format!(
                "ciphertext of {} bytes, store expects {}",
                ct.len(),
                self.record
            ));
        }
        let epoch = self.state(area, slot)?.epoch;
        let state = self.areas.get_mut(&area).expect("checked above");
        match &mut state.slots {
            Slots::Memory(v) => v[slot as usize] = Some(ct.0.clone()),
            Slots::Disk { file, deleted, .. } => {
                file.write_all_at(&ct.0, slot * self.record as u64)?;
                deleted[slot as usize] = false;
            }
        }
        match self.phase {
            Phase::Setup => self.stats.setup_up += 1,
            Phase::Offline => self.stats.offline_up += 1,
        }
        self.push_log(Op::Write, area, slot, epoch);
        Ok(())
    }

    /// Offline download of several slots in one round trip.
    pub fn read_slots(&mut self, area: Area, slots: &[u64]) -> Result<Vec<Ciphertext>> {
        let q: Vec<(Area, u64)> = slots.iter().map(|&s| (area, s)).collect();
        self.read_offline(&q)
    }

    /// Offline download of arbitrary slots in one round trip.
    pub fn read_offline(&mut self, q: &[(Area, u64)]) -> Result<Vec<Ciphertext>> {
        let mut out = Vec::with_capacity(q.len());
        for &(area, s) in q {
            let (ct, epoch) = self.fetch(area, s)?;
            self.stats.offline_down += 1;
            self.push_log(Op::Read, area, s, epoch);
            out.push(ct);
        }
        self.stats.offline_round_trips += 1;
        Ok(out)
    }

    /// The online request: every slot in `q` is returned, in order, in a
    /// single round trip.
    pub fn read_batch(&mut self, q: &[(Area, u64)]) -> Result<Vec<Ciphertext>> {
        for &(area, slot) in q {
            self.state(area, slot)?;
        }
        let mut out = Vec::with_capacity(q.len());
        for &(area, slot) in q {
            let (ct, epoch) = self.fetch(area, slot)?;
            self.stats.online_down += 1;
            self.push_log(Op::Probe, area, slot, epoch);
            out.push(ct);
        }
        self.stats.online_round_trips += 1;
        Ok(out)
    }

    /// Like [`read_batch`](Self::read_batch) but the reply is the XOR of
    /// all requested ciphertexts, one block downstream.
    pub fn xor_batch(&mut self, q: &[(Area, u64)]) -> Result<Ciphertext> {
        for &(area, slot) in q {
            self.state(area, slot)?;
        }
        let mut acc = Ciphertext::zeroed(self.record);
        let mut last = (Area::Temp, 0);
        for &(area, slot) in q {
            let (ct, epoch) = self.fetch(area, slot)?;
            acc.xor_in(&ct);
            self.push_log(Op::Xprobe, area, slot, epoch);
            last = (area, epoch);
        }
        self.stats.online_down += 1;
        self.stats.online_round_trips += 1;
        self.push_log(Op::Xreply, last.0, q.len() as u64, last.1);
        Ok(acc)
    }

    /// Writes the log as CSV with header `op,area,slot,epoch`.
    pub fn export_log_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        writeln!(w, "op,area,slot,epoch")?;
        for e in &self.log {
            writeln!(w, "{},{},{},{}", e.op.as_str(), e.area, e.slot, e.epoch)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Drop for ServerStore {
    fn drop(&mut self) {
        let areas: Vec<Area> = self.areas.keys().copied().collect();
        for a in areas {
            let _ = self.release(a);
        }
    }
}

/// Recomputes (down, up) from a log: the accounting identity the counters
/// must satisfy.
pub fn log_totals(log: &[LogEntry]) -> (u64, u64) {
    let down = log.iter().filter(|e| e.op.is_download()).count() as u64;
    let up = log.iter().filter(|e| e.op == Op::Write).count() as u64;
    (down, up)
}
