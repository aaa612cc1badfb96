//! Replays the hierarchical rebuild schedule against the client structures.
//!
//! Each access moves its block to level 0; afterwards the counter advances
//! and the smallest empty level absorbs everything below it. The structures
//! only see the resulting metadata updates, never any block traffic.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rank_oram::baselines::{ArrayPositionMap, CompressedCounters};
use rank_oram::hist::HistoricalMembership;
use rank_oram::oram::rebuild_target;
use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::trace::TraceRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Array,
    Cc,
    Hist,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Array, Structure::Cc, Structure::Hist];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Array => "array",
            Structure::Cc => "cc",
            Structure::Hist => "hist",
        }
    }

    /// Comma-separated list such as `array,cc,hist`.
    pub fn parse_list(s: &str) -> Result<Vec<Structure>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let st = match part {
                "array" => Structure::Array,
                "cc" | "compressedcounters" => Structure::Cc,
                "hist" => Structure::Hist,
                other => {
                    return Err(BenchError::Usage(format!(
                        "unknown structure `{other}` (expected array, cc or hist)"
                    )))
                }
            };
            if !out.contains(&st) {
                out.push(st);
            }
        }
        if out.is_empty() {
            return Err(BenchError::Usage("no structures selected".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureMetrics {
    pub structure: Structure,
    pub n: u64,
    pub accesses: u64,
    pub rebuilds: u64,
    pub peak_client_bits: u64,
    pub final_client_bits: u64,
    pub bits_per_block: f64,
    /// Metadata updates issued by the schedule (point writes and merges).
    pub updates: u64,
    /// Abstract work: record writes for the array, element steps for the
    /// other two.
    pub element_steps: u64,
    pub element_steps_per_access: f64,
    pub wall_ns_per_access: f64,
    pub wall_ms: f64,
}

/// Schedule bookkeeping shared by every structure: which addresses each
/// level holds. Entries can be stale (the address was accessed again and
/// now sits lower), which only matters for deduplication.
struct Schedule {
    depth: u32,
    mask: u64,
    count: u64,
    level_of: Vec<u8>,
    members: Vec<Vec<u64>>,
}

impl Schedule {
    fn new(n: u64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(BenchError::Usage(format!(
                "n must be a power of two >= 2, got {n}"
            )));
        }
        let depth = n.trailing_zeros();
        Ok(Self {
            depth,
            mask: n - 1,
            count: 0,
            level_of: vec![depth as u8; n as usize],
            members: vec![Vec::new(); depth as usize],
        })
    }

    fn access(&mut self, a: u64) {
        if self.level_of[a as usize] != 0 {
            self.level_of[a as usize] = 0;
            self.members[0].push(a);
        }
    }

    /// Advances the counter and applies the rebuild. Returns the target
    /// level; `moved` receives the addresses that changed level.
    fn rebuild(&mut self, moved: &mut Vec<u64>) -> u32 {
        self.count = (self.count + 1) & self.mask;
        let l = rebuild_target(self.count, self.depth);
        moved.clear();
        for list in &mut self.members[..l as usize] {
            for a in list.drain(..) {
                if u32::from(self.level_of[a as usize]) < l {
                    self.level_of[a as usize] = l as u8;
                    moved.push(a);
                }
            }
        }
        if l < self.depth {
            self.members[l as usize].extend_from_slice(moved);
        }
        l
    }
}

struct Tally {
    accesses: u64,
    rebuilds: u64,
    peak: u64,
    last: u64,
    updates: u64,
    steps: u64,
}

fn finish(structure: Structure, n: u64, t: Tally, started: Instant) -> StructureMetrics {
    let wall = started.elapsed();
    let per = t.accesses.max(1) as f64;
    StructureMetrics {
        structure,
        n,
        accesses: t.accesses,
        rebuilds: t.rebuilds,
        peak_client_bits: t.peak,
        final_client_bits: t.last,
        bits_per_block: t.peak as f64 / n as f64,
        updates: t.updates,
        element_steps: t.steps,
        element_steps_per_access: t.steps as f64 / per,
        wall_ns_per_access: wall.as_nanos() as f64 / per,
        wall_ms: wall.as_secs_f64() * 1e3,
    }
}

fn check_trace(trace: &[TraceRecord], n: u64) -> Result<()> {
    match trace.iter().find(|r| r.address >= n) {
        Some(r) => Err(BenchError::Usage(format!(
            "address {} outside [0, {n})",
            r.address
        ))),
        None => Ok(()),
    }
}

pub fn replay_array(trace: &[TraceRecord], n: u64) -> Result<StructureMetrics> {
    check_trace(trace, n)?;
    let started = Instant::now();
    let mut sched = Schedule::new(n)?;
    let mut map = ArrayPositionMap::new(n, sched.depth)?;
    let mut moved = Vec::new();
    let (mut updates, mut rebuilds) = (0, 0);
    for r in trace {
        let (_, c) = map.query(r.address)?;
        map.update(r.address, 0, c + 1)?;
        sched.access(r.address);
        updates += 1;
        let level = sched.rebuild(&mut moved);
        for &a in &moved {
            map.set_level(a, level)?;
        }
        updates += moved.len() as u64;
        rebuilds += 1;
    }
    let bits = map.size_in_bits();
    let t = Tally {
        accesses: trace.len() as u64,
        rebuilds,
        peak: bits,
        last: bits,
        updates,
        steps: map.update_ops(),
    };
    Ok(finish(Structure::Array, n, t, started))
}

pub fn replay_cc(
    trace: &[TraceRecord],
    n: u64,
    z: usize,
    key: [u8; 16],
) -> Result<StructureMetrics> {
    check_trace(trace, n)?;
    let started = Instant::now();
    let mut sched = Schedule::new(n)?;
    let mut cc = CompressedCounters::new(n, sched.depth, z, key)?;
    let mut moved = Vec::new();
    let (mut updates, mut rebuilds) = (0, 0);
    for r in trace {
        cc.increment(r.address)?;
        cc.set_level(r.address, 0)?;
        sched.access(r.address);
        updates += 2;
        let level = sched.rebuild(&mut moved);
        if level == sched.depth {
            cc.reset_levels()?;
            updates += 1;
        } else {
            for &a in &moved {
                cc.set_level(a, level)?;
            }
            updates += moved.len() as u64;
        }
        rebuilds += 1;
    }
    let t = Tally {
        accesses: trace.len() as u64,
        rebuilds,
        peak: cc.peak_bits(),
        last: cc.size_in_bits(),
        updates,
        steps: cc.work().element_steps,
    };
    Ok(finish(Structure::Cc, n, t, started))
}

pub fn replay_hist(trace: &[TraceRecord], n: u64) -> Result<StructureMetrics> {
    check_trace(trace, n)?;
    let started = Instant::now();
    let mut sched = Schedule::new(n)?;
    let mut hist = HistoricalMembership::new(n)?;
    let mut moved = Vec::new();
    let mut peak = hist.size_in_bits();
    let (mut updates, mut rebuilds) = (0, 0);
    for r in trace {
        hist.insert_into_level0(r.address)?;
        sched.access(r.address);
        let level = sched.rebuild(&mut moved);
        if level == sched.depth {
            hist.merge_into_top();
        } else {
            hist.merge_levels(level)?;
        }
        updates += 2;
        rebuilds += 1;
        peak = peak.max(hist.size_in_bits());
    }
    let t = Tally {
        accesses: trace.len() as u64,
        rebuilds,
        peak,
        last: hist.size_in_bits(),
        updates,
        steps: hist.work(),
    };
    Ok(finish(Structure::Hist, n, t, started))
}

/// Replays `trace` against each selected structure, one thread apiece.
pub fn replay_structures(
    trace: &[TraceRecord],
    n: u64,
    structures: &[Structure],
    z: usize,
    seed: u64,
) -> Result<Vec<StructureMetrics>> {
    let mut key = [0u8; 16];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    std::thread::scope(|s| {
        let handles: Vec<_> = structures
            .iter()
            .map(|&st| {
                s.spawn(move || match st {
                    Structure::Array => replay_array(trace, n),
                    Structure::Cc => replay_cc(trace, n, z, key),
                    Structure::Hist => replay_hist(trace, n),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replay thread panicked"))
            .collect()
    })
}

/// Size of `historicalMembership` in the fullest state the schedule can
/// reach: the counter at `2^(L-1) - 1` with every access a distinct random
/// address, so levels `0..L-1` are all occupied and nothing is stale.
pub fn adversarial_hist_bits(n: u64, seed: u64) -> Result<u64> {
    let mut addrs: Vec<u64> = (0..n).collect();
    addrs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let steps = (n / 2).saturating_sub(1);
    let trace: Vec<TraceRecord> = addrs[..steps as usize]
        .iter()
        .map(|&address| TraceRecord {
            op: crate::trace::TraceOp::Read,
            address,
            payload_seed: None,
        })
        .collect();
    Ok(replay_hist(&trace, n)?.final_client_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{gen_trace, TraceKind};
    use rank_oram::oram::{OpKind, OramConfig, RankOram};

    #[test]
    fn schedule_matches_the_protocol() {
        // The hierarchy the ORAM actually maintains is the ground truth.
        let n = 64;
        let trace = gen_trace(TraceKind::Zipf(1.3), n, 400, 3).unwrap();
        let mut cfg = OramConfig::new(n, 8);
        cfg.client_levels = Some(0);
        let mut oram = RankOram::new(cfg).unwrap();
        let mut sched = Schedule::new(n).unwrap();
        let mut moved = Vec::new();
        for r in &trace {
            oram.access(r.address, OpKind::Read, None).unwrap();
            sched.access(r.address);
            sched.rebuild(&mut moved);
            for a in 0..n {
                assert_eq!(u32::from(sched.level_of[a as usize]), oram.hist().level(a));
            }
        }
    }

    #[test]
    fn structures_agree_on_levels() {
        let n = 256;
        let trace = gen_trace(TraceKind::Uniform, n, 3000, 9).unwrap();
        let mut sched = Schedule::new(n).unwrap();
        let mut hist = HistoricalMembership::new(n).unwrap();
        let mut cc = CompressedCounters::new(n, 8, 20, [1; 16]).unwrap();
        let mut arr = ArrayPositionMap::new(n, 8).unwrap();
        let mut moved = Vec::new();
        for (i, r) in trace.iter().enumerate() {
            hist.insert_into_level0(r.address).unwrap();
            cc.increment(r.address).unwrap();
            cc.set_level(r.address, 0).unwrap();
            let (_, c) = arr.query(r.address).unwrap();
            arr.update(r.address, 0, c + 1).unwrap();
            sched.access(r.address);
            let level = sched.rebuild(&mut moved);
            if level == 8 {
                hist.merge_into_top();
                cc.reset_levels().unwrap();
            } else {
                hist.merge_levels(level).unwrap();
                for &a in &moved {
                    cc.set_level(a, level).unwrap();
                }
            }
            for &a in &moved {
                arr.set_level(a, level).unwrap();
            }
            if i % 97 == 0 {
                for a in 0..n {
                    let l = hist.level(a);
                    assert_eq!(cc.level(a).unwrap(), l);
                    assert_eq!(arr.query(a).unwrap().0, l);
                    assert_eq!(cc.count(a).unwrap(), arr.query(a).unwrap().1);
                }
            }
        }
    }

    #[test]
    fn parallel_replay_is_reproducible() {
        let n = 1 << 10;
        let trace = gen_trace(TraceKind::Zipf(1.2), n, 4 * n, 5).unwrap();
        let a = replay_structures(&trace, n, &Structure::ALL, 20, 1).unwrap();
        let b = replay_structures(&trace, n, &Structure::ALL, 20, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.structure, y.structure);
            assert_eq!(x.peak_client_bits, y.peak_client_bits);
            assert_eq!(x.element_steps, y.element_steps);
            assert_eq!(x.bits_per_block, x.peak_client_bits as f64 / n as f64);
        }
    }

    #[test]
    fn parse_structure_list() {
        assert_eq!(
            Structure::parse_list("hist, cc,hist").unwrap(),
            vec![Structure::Hist, Structure::Cc]
        );
        assert!(Structure::parse_list("tree").is_err());
        assert!(Structure::parse_list("").is_err());
    }

    #[test]
    fn adversarial_state_fills_every_lower_level() {
        let n = 1 << 10;
        let bits = adversarial_hist_bits(n, 1).unwrap();
        // 511 distinct addresses stored once each.
        assert!(bits > 511 && bits < 20 * n, "{bits}");
    }
}
