//! Full protocol runs checked against a plain in-memory RAM.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rank_oram::oram::{OpKind, OramConfig, OramStats, RankOram};
use rank_oram::server::log_totals;
use serde::Serialize;

use crate::error::Result;
use crate::trace::{TraceOp, TraceRecord};

#[derive(Clone, Debug, Serialize)]
pub struct OramRun {
    pub stats: OramStats,
    pub accesses: u64,
    pub mismatches: u64,
    pub first_mismatch: Option<u64>,
    pub online_per_access: f64,
    pub offline_per_access: f64,
    pub total_per_access: f64,
    pub online_down_per_access: f64,
    pub round_trips_per_access: f64,
    /// Every access used exactly one online round trip.
    pub single_round_trip: bool,
    /// Server log length over the run (all ops, including setup writes).
    pub log_entries: u64,
    /// Transfers recounted from the log equal the server counters. Always
    /// true when logging is off.
    pub log_matches_counters: bool,
    pub wall_ms: f64,
}

impl OramRun {
    pub fn correct(&self) -> bool {
        self.mismatches == 0
    }
}

/// Payload for a write record: `block_size` bytes drawn from its seed.
pub fn payload(seed: u64, block_size: usize) -> Vec<u8> {
    let mut p = vec![0u8; block_size];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut p);
    p
}

/// Drives `trace` through a fresh ORAM and compares every returned payload
/// with the oracle's. Returns the ORAM too so callers can audit its log.
pub fn run_oram_with(trace: &[TraceRecord], cfg: OramConfig) -> Result<(OramRun, RankOram)> {
    let started = Instant::now();
    let b = cfg.block_size;
    let mut oracle = vec![vec![0u8; b]; cfg.n as usize];
    let mut oram = RankOram::new(cfg)?;
    let (mut mismatches, mut first_mismatch) = (0u64, None);
    let mut single = true;
    for (i, r) in trace.iter().enumerate() {
        let res = match r.op {
            TraceOp::Read => oram.access(r.address, OpKind::Read, None)?,
            TraceOp::Write => {
                let data = payload(r.payload_seed.unwrap_or(i as u64), b);
                oram.access(r.address, OpKind::Write, Some(data))?
            }
        };
        let slot = &mut oracle[r.address as usize];
        if res.data != *slot {
            mismatches += 1;
            first_mismatch.get_or_insert(i as u64);
        }
        if r.op == TraceOp::Write {
            *slot = payload(r.payload_seed.unwrap_or(i as u64), b);
        }
        single &= res.round_trips == 1;
    }
    let stats = oram.stats();
    let log = oram.server().access_log();
    let log_matches_counters =
        log.is_empty() || log_totals(log) == (stats.server.down(), stats.server.up());
    let per = trace.len().max(1) as f64;
    let run = OramRun {
        accesses: trace.len() as u64,
        mismatches,
        first_mismatch,
        online_per_access: stats.online_per_access(),
        offline_per_access: stats.offline_per_access(),
        total_per_access: stats.total_per_access(),
        online_down_per_access: stats.server.online_down as f64 / per,
        round_trips_per_access: stats.server.online_round_trips as f64 / per,
        single_round_trip: single && stats.server.online_round_trips == trace.len() as u64,
        log_entries: log.len() as u64,
        log_matches_counters,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        stats,
    };
    Ok((run, oram))
}

pub fn run_oram(trace: &[TraceRecord], cfg: OramConfig) -> Result<OramRun> {
    Ok(run_oram_with(trace, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{gen_trace, TraceKind};

    #[test]
    fn small_run_is_correct() {
        let n = 256;
        let trace = gen_trace(TraceKind::Zipf(1.1), n, 2000, 4).unwrap();
        let run = run_oram(&trace, OramConfig::new(n, 16)).unwrap();
        assert!(run.correct());
        assert!(run.single_round_trip);
        assert_eq!(run.stats.accesses, 2000);
        assert!(run.log_matches_counters);
    }

    #[test]
    fn xor_mode_downloads_one_block_online() {
        let n = 512;
        let trace = gen_trace(TraceKind::Uniform, n, 1500, 8).unwrap();
        let mut cfg = OramConfig::new(n, 16);
        cfg.xor_mode = true;
        let run = run_oram(&trace, cfg).unwrap();
        assert!(run.correct());
        assert_eq!(run.stats.server.online_down, 1500);
    }

    #[test]
    fn runs_are_reproducible() {
        let n = 128;
        let trace = gen_trace(TraceKind::Uniform, n, 700, 2).unwrap();
        let a = run_oram(&trace, OramConfig::new(n, 8)).unwrap();
        let b = run_oram(&trace, OramConfig::new(n, 8)).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.log_entries, b.log_entries);
    }
}
