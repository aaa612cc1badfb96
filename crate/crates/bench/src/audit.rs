//! Obliviousness audits over server access logs.
//!
//! Three checks: no slot of a level is probed twice within one epoch, two
//! equal-length workloads produce the same server-visible shape, and probed
//! slot values are uniform within each level.

use std::collections::HashMap;

use rank_oram::oram::{AccessShape, OramConfig};
use rank_oram::server::{Area, LogEntry, LogMode, Op};
use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::run::run_oram_with;
use crate::stats::{chi_square_p, chi_square_uniform};
use crate::trace::TraceRecord;

/// Bins per level in the uniformity test; levels narrower than this are
/// skipped.
pub const UNIFORMITY_BINS: u64 = 8;
pub const UNIFORMITY_ALPHA: f64 = 0.01;
const MAX_REPORTED: usize = 20;

#[derive(Clone, Debug, Serialize)]
pub struct RepeatedProbe {
    pub area: Area,
    pub epoch: u64,
    pub slot: u64,
    pub first_entry: usize,
    pub second_entry: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub probes: u64,
    pub violations: u64,
    /// The first few repeats, by log position.
    pub examples: Vec<RepeatedProbe>,
}

impl UniquenessReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Every online probe (plain or XOR-folded) must hit a distinct slot of
/// its area within the area's epoch.
pub fn slot_uniqueness(log: &[LogEntry]) -> UniquenessReport {
    let mut seen: HashMap<(Area, u64, u64), usize> = HashMap::new();
    let mut report = UniquenessReport {
        probes: 0,
        violations: 0,
        examples: Vec::new(),
    };
    for (i, e) in log.iter().enumerate() {
        if !matches!(e.op, Op::Probe | Op::Xprobe) {
            continue;
        }
        report.probes += 1;
        if let Some(&first) = seen.get(&(e.area, e.epoch, e.slot)) {
            report.violations += 1;
            if report.examples.len() < MAX_REPORTED {
                report.examples.push(RepeatedProbe {
                    area: e.area,
                    epoch: e.epoch,
                    slot: e.slot,
                    first_entry: first,
                    second_entry: i,
                });
            }
        } else {
            seen.insert((e.area, e.epoch, e.slot), i);
        }
    }
    report
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeDiff {
    pub access: usize,
    pub left: Option<AccessShape>,
    pub right: Option<AccessShape>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeReport {
    pub accesses: usize,
    pub identical: bool,
    pub first_diff: Option<ShapeDiff>,
}

pub fn compare_shapes(left: &[AccessShape], right: &[AccessShape]) -> ShapeReport {
    let len = left.len().max(right.len());
    let first_diff = (0..len)
        .find(|&i| left.get(i) != right.get(i))
        .map(|i| ShapeDiff {
            access: i,
            left: left.get(i).cloned(),
            right: right.get(i).cloned(),
        });
    ShapeReport {
        accesses: len,
        identical: first_diff.is_none(),
        first_diff,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelUniformity {
    pub level: u32,
    pub samples: u64,
    pub counts: Vec<u64>,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UniformityReport {
    pub seeds: u32,
    pub bins: u64,
    pub levels: Vec<LevelUniformity>,
    /// Sum of the per-level statistics, tested once so that the verdict
    /// does not depend on how many levels happen to be probed.
    pub pooled_statistic: f64,
    pub pooled_df: u64,
    pub p_value: f64,
}

impl UniformityReport {
    pub fn passed(&self) -> bool {
        self.p_value > UNIFORMITY_ALPHA
    }
}

/// Bins probed slots of each level `l` (width `2 * 2^l`) into equal ranges
/// and accumulates the counts into `acc`.
fn bin_probes(log: &[LogEntry], acc: &mut HashMap<u32, Vec<u64>>) {
    for e in log {
        if !matches!(e.op, Op::Probe | Op::Xprobe) {
            continue;
        }
        let Area::Level(l) = e.area else { continue };
        let width = 2u64 << l;
        if width < UNIFORMITY_BINS {
            continue;
        }
        let bin = (e.slot * UNIFORMITY_BINS / width) as usize;
        acc.entry(l)
            .or_insert_with(|| vec![0; UNIFORMITY_BINS as usize])[bin] += 1;
    }
}

pub fn slot_uniformity(
    trace: &[TraceRecord],
    base: &OramConfig,
    seeds: u32,
) -> Result<UniformityReport> {
    let mut acc = HashMap::new();
    for s in 0..seeds {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(u64::from(s));
        cfg.log = LogMode::Full;
        let (_, oram) = run_oram_with(trace, cfg)?;
        bin_probes(oram.server().access_log(), &mut acc);
    }
    let mut levels: Vec<LevelUniformity> = acc
        .into_iter()
        .map(|(level, counts)| {
            let statistic = chi_square_uniform(&counts);
            LevelUniformity {
                level,
                samples: counts.iter().sum(),
                p_value: chi_square_p(statistic, UNIFORMITY_BINS - 1),
                statistic,
                counts,
            }
        })
        .collect();
    levels.sort_by_key(|l| l.level);
    let pooled_statistic = levels.iter().map(|l| l.statistic).sum();
    let pooled_df = levels.len() as u64 * (UNIFORMITY_BINS - 1);
    Ok(UniformityReport {
        seeds,
        bins: UNIFORMITY_BINS,
        p_value: chi_square_p(pooled_statistic, pooled_df),
        pooled_statistic,
        pooled_df,
        levels,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub accesses: usize,
    pub uniqueness_first: UniquenessReport,
    pub uniqueness_second: UniquenessReport,
    pub shape: ShapeReport,
    pub uniformity: Option<UniformityReport>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.uniqueness_first.passed()
            && self.uniqueness_second.passed()
            && self.shape.identical
            && self
                .uniformity
                .as_ref()
                .is_none_or(UniformityReport::passed)
    }

    /// Human-readable reasons for failure, empty on success.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, u) in [
            ("first", &self.uniqueness_first),
            ("second", &self.uniqueness_second),
        ] {
            if let Some(r) = u.examples.first() {
                out.push(format!(
                    "{name} workload: {} repeated probes; first: {} epoch {} slot {} (log entries {} and {})",
                    u.violations, r.area, r.epoch, r.slot, r.first_entry, r.second_entry
                ));
            }
        }
        if let Some(d) = &self.shape.first_diff {
            out.push(format!(
                "shapes diverge at access {}: {:?} vs {:?}",
                d.access, d.left, d.right
            ));
        }
        if let Some(u) = self.uniformity.as_ref().filter(|u| !u.passed()) {
            let worst = u
                .levels
                .iter()
                .min_by(|a, b| a.p_value.total_cmp(&b.p_value))
                .map(|l| format!(" (worst level {} p = {:.2e})", l.level, l.p_value))
                .unwrap_or_default();
            out.push(format!(
                "probed slots not uniform: pooled p = {:.2e}{worst}",
                u.p_value
            ));
        }
        out
    }
}

/// Runs both workloads under the same configuration and checks slot
/// uniqueness on each log and shape equality between them. With
/// `uniformity_seeds > 0` the first workload is also rerun under that many
/// seeds for the slot-uniformity test.
pub fn audit_obliviousness(
    first: &[TraceRecord],
    second: &[TraceRecord],
    base: &OramConfig,
    uniformity_seeds: u32,
) -> Result<AuditReport> {
    if first.len() != second.len() {
        return Err(BenchError::Usage(format!(
            "audit workloads differ in length ({} vs {})",
            first.len(),
            second.len()
        )));
    }
    let mut cfg = base.clone();
    cfg.log = LogMode::Full;
    cfg.record_shape = true;
    let (_, a) = run_oram_with(first, cfg.clone())?;
    let (_, b) = run_oram_with(second, cfg)?;
    let uniformity = if uniformity_seeds > 0 {
        Some(slot_uniformity(first, base, uniformity_seeds)?)
    } else {
        None
    };
    Ok(AuditReport {
        accesses: first.len(),
        uniqueness_first: slot_uniqueness(a.server().access_log()),
        uniqueness_second: slot_uniqueness(b.server().access_log()),
        shape: compare_shapes(a.shapes(), b.shapes()),
        uniformity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{gen_trace, TraceKind};

    fn entry(op: Op, l: u32, epoch: u64, slot: u64) -> LogEntry {
        LogEntry {
            op,
            area: Area::Level(l),
            slot,
            epoch,
        }
    }

    #[test]
    fn repeats_are_found_only_within_an_epoch() {
        let log = [
            entry(Op::Probe, 3, 1, 5),
            entry(Op::Probe, 3, 2, 5),
            entry(Op::Read, 3, 1, 5),
            entry(Op::Xprobe, 4, 1, 5),
        ];
        assert!(slot_uniqueness(&log).passed());
        let mut bad = log.to_vec();
        bad.push(entry(Op::Xprobe, 3, 2, 5));
        let r = slot_uniqueness(&bad);
        assert_eq!(r.violations, 1);
        assert_eq!(
            (r.examples[0].first_entry, r.examples[0].second_entry),
            (1, 4)
        );
    }

    #[test]
    fn healthy_build_passes_and_frozen_counter_fails() {
        let n = 256;
        let seq = gen_trace(TraceKind::Sequential, n, 600, 1).unwrap();
        let uni = gen_trace(TraceKind::Uniform, n, 600, 1).unwrap();
        let cfg = OramConfig::new(n, 8);
        let report = audit_obliviousness(&seq, &uni, &cfg, 3).unwrap();
        assert!(report.passed(), "{:?}", report.failures());

        let mut broken = cfg.clone();
        broken.freeze_dummy_counter = true;
        let report = audit_obliviousness(&seq, &uni, &broken, 0).unwrap();
        assert!(!report.uniqueness_first.passed());
        assert!(!report.failures().is_empty());
    }

    #[test]
    fn shape_diff_points_at_first_divergence() {
        let s = |t| AccessShape {
            probed: vec![5],
            target: t,
            online_down: 1,
            offline_down: 0,
            offline_up: 0,
        };
        let r = compare_shapes(&[s(1), s(2)], &[s(1), s(3)]);
        assert_eq!(r.first_diff.unwrap().access, 1);
        let r = compare_shapes(&[s(1)], &[s(1), s(3)]);
        assert!(!r.identical);
        assert!(compare_shapes(&[s(1)], &[s(1)]).identical);
    }

    #[test]
    fn unequal_lengths_rejected() {
        let t = gen_trace(TraceKind::Uniform, 16, 10, 0).unwrap();
        assert!(audit_obliviousness(&t, &t[..5], &OramConfig::new(16, 8), 0).is_err());
    }
}
