//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs everything by default; pass criterion numbers to run a subset,
//! e.g. `cargo test -p rank-oram-bench --test acceptance -- 4 9`.

use std::collections::{BTreeSet, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rank_oram::codec::dict::{default_width, merge_streams, RleDictionary};
use rank_oram::crypto::cipher::{ciphertext_width, encrypt_block, Block, Context, Key};
use rank_oram::crypto::prp::Prp;
use rank_oram::oram::OramConfig;
use rank_oram::server::{Area, LogMode, ServerStore};
use rank_oram::shuffle::{
    failure_stats, naive_dummy_shuffle, short_queue_shuffle, Output, ShuffleParams, Source,
};
use rank_oram_bench::audit::audit_obliviousness;
use rank_oram_bench::replay::{
    adversarial_hist_bits, replay_cc, replay_hist, replay_structures, Structure,
};
use rank_oram_bench::run::{run_oram, OramRun};
use rank_oram_bench::trace::{gen_trace, TraceKind};

/// Frozen after measurement: adversarial full-hierarchy size came out at
/// 5.2 bits/block for n = 2^16 and 4.75 for n = 2^20.
const HIST_BITS_PER_BLOCK_BOUND: f64 = 6.0;
/// Every interval stores a `log2 n`-bit start and the pathological
/// workload produces at least `n` intervals, so `c = 1` is the floor.
const PATHOLOGICAL_C: f64 = 1.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

/// Round-trip evidence from one run: (ok, description).
type Trips = (bool, String);

fn trips(run: &OramRun, label: &str) -> Trips {
    let t = run.stats.server.online_round_trips;
    (
        run.single_round_trip && t == run.accesses,
        format!(
            "{label}: {t} online round trips for {} accesses",
            run.accesses
        ),
    )
}

fn criterion_1() -> (Outcome, Vec<Trips>) {
    let n = 1 << 14;
    let ops = 100_000;
    let trace = gen_trace(TraceKind::Uniform, n, ops, 101).expect("trace");
    let t = Instant::now();
    let mut cfg = OramConfig::new(n, 32);
    cfg.seed = 1;
    cfg.log = LogMode::Off;
    let run = match run_oram(&trace, cfg) {
        Ok(r) => r,
        Err(e) => {
            return (
                outcome(false, format!("run failed: {e}")),
                vec![(false, "no run".into())],
            );
        }
    };
    let elapsed = t.elapsed();
    let c1 = outcome(
        run.correct() && elapsed < Duration::from_secs(120),
        format!(
            "{} mismatches over {ops} mixed ops at n = 2^14 in {}",
            run.mismatches,
            secs(elapsed)
        ),
    );
    (c1, vec![trips(&run, "n = 2^14")])
}

fn criterion_3() -> (Outcome, Vec<Trips>) {
    let n: u64 = 1 << 16;
    let len = 4 * n;
    let trace = gen_trace(TraceKind::Uniform, n, len, 103).expect("trace");
    let t = Instant::now();
    let mut cfg = OramConfig::new(n, 32);
    cfg.seed = 3;
    cfg.log = LogMode::Off;
    let plain = match run_oram(&trace, cfg.clone()) {
        Ok(r) => r,
        Err(e) => {
            return (
                outcome(false, format!("run failed: {e}")),
                vec![(false, "no run".into())],
            )
        }
    };
    cfg.xor_mode = true;
    let xor = match run_oram(&trace, cfg) {
        Ok(r) => r,
        Err(e) => {
            return (
                outcome(false, format!("xor run failed: {e}")),
                vec![(false, "no xor run".into())],
            )
        }
    };
    let elapsed = t.elapsed();
    let target = 4.0 * 16.0;
    let total = plain.total_per_access;
    let within = (total - target).abs() <= 0.1 * target;
    let xor_exact = xor.stats.server.online_down == len && xor.correct();
    let c3 = outcome(
        within && xor_exact && plain.correct() && elapsed < Duration::from_secs(600),
        format!(
            "{total:.2} blocks/access (online {:.2}, offline {:.2}; target 64 +/- 10%), \
             XOR online down {} for {len} accesses, k = {}, {}",
            plain.online_per_access,
            plain.offline_per_access,
            xor.stats.server.online_down,
            plain.stats.client_levels,
            secs(elapsed)
        ),
    );
    (
        c3,
        vec![trips(&plain, "n = 2^16"), trips(&xor, "n = 2^16 xor")],
    )
}

const B: usize = 16;

/// Uploads `n` input blocks (roughly 70% real) and returns their sources.
fn stage_input(server: &mut ServerStore, key: &Key, n: u64, seed: u64) -> Vec<Source> {
    let area = Area::Level(30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    server.allocate(area, n).expect("allocate");
    (0..n)
        .map(|i| {
            let ctx = Context::new(30, 1, i);
            let b = if rng.random_bool(0.7) {
                Block::real(i * 3 + 1, (0..B).map(|_| rng.random()).collect())
            } else {
                Block::dummy(i, B)
            };
            server
                .write_slot(area, i, &encrypt_block(key, ctx, &b))
                .expect("write");
            Source::Server { area, slot: i, ctx }
        })
        .collect()
}

fn prp_seed(x: u64) -> [u8; 16] {
    let mut s = [0u8; 16];
    s[..8].copy_from_slice(&x.to_le_bytes());
    s
}

const OUT: Output = Output {
    area: Area::Staging,
    level: 7,
    epoch: 3,
};

fn criterion_4() -> Outcome {
    let key = Key::from_seed(4);
    let mut notes = Vec::new();
    let mut ok = true;

    for n in [1u64 << 10, 1 << 14] {
        let mut server = ServerStore::in_memory(ciphertext_width(B));
        server.set_log_mode(LogMode::Off);
        let inputs = stage_input(&mut server, &key, n, n);
        let pi = Prp::new(2 * n, prp_seed(n)).expect("prp");
        match short_queue_shuffle(
            &mut server,
            &key,
            B,
            &inputs,
            n,
            &|a| pi.eval(a / 3),
            OUT,
            &ShuffleParams::default(),
        ) {
            Ok(r) => {
                let total = r.bandwidth_down + r.bandwidth_up;
                ok &= total == 7 * n;
                notes.push(format!(
                    "n = 2^{}: {total} blocks = {:.3}n",
                    n.trailing_zeros(),
                    total as f64 / n as f64
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("n = {n}: {e}"));
            }
        }
    }

    let n = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatched = 0;
    for inst in 0..1000u64 {
        let mut a = ServerStore::in_memory(ciphertext_width(B));
        let mut b = ServerStore::in_memory(ciphertext_width(B));
        let ia = stage_input(&mut a, &key, n, inst);
        let ib = stage_input(&mut b, &key, n, inst);
        let pi = Prp::new(2 * n, prp_seed(rng.random())).expect("prp");
        let dest = |x: u64| pi.eval(x / 3);
        let params = ShuffleParams {
            seed: rng.random(),
            ..Default::default()
        };
        let ra = short_queue_shuffle(&mut a, &key, B, &ia, n, &dest, OUT, &params);
        let rb = naive_dummy_shuffle(&mut b, &key, B, &ib, n, &dest, OUT);
        let slots: Vec<u64> = (0..2 * n).collect();
        let same = ra.is_ok()
            && rb.is_ok()
            && a.read_slots(OUT.area, &slots).ok() == b.read_slots(OUT.area, &slots).ok();
        mismatched += u32::from(!same);
    }
    ok &= mismatched == 0;
    notes.push(format!(
        "{mismatched}/1000 layouts differ from the naive oracle at n = 256"
    ));

    match failure_stats(1 << 14, 100, 6.0, 4) {
        Ok(s) => {
            ok &= s.failures == 0 && (s.peak_queue_max as f64) <= s.threshold;
            notes.push(format!(
                "{} overflows in 100 trials at n = 2^14, peak queue {} <= {:.0}",
                s.failures, s.peak_queue_max, s.threshold
            ));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("failure_stats: {e}"));
        }
    }
    outcome(ok, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let mut per = Vec::new();
    for l in [16u32, 20] {
        let n = 1u64 << l;
        match adversarial_hist_bits(n, 5) {
            Ok(bits) => per.push(bits as f64 / n as f64),
            Err(e) => return outcome(false, format!("n = 2^{l}: {e}")),
        }
    }
    let ratio = per[1] / per[0];
    outcome(
        per.iter().all(|&b| b <= HIST_BITS_PER_BLOCK_BOUND) && (ratio - 1.0).abs() <= 0.15,
        format!(
            "{:.2} bits/block at 2^16, {:.2} at 2^20 (bound {HIST_BITS_PER_BLOCK_BOUND}), ratio {ratio:.3}",
            per[0], per[1]
        ),
    )
}

fn criterion_6() -> Outcome {
    let n: u64 = 1 << 20;
    let len = 8 * n;
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    let size = |ms: &[rank_oram_bench::replay::StructureMetrics], s: Structure| {
        ms.iter()
            .find(|m| m.structure == s)
            .map_or(0.0, |m| m.bits_per_block)
    };

    let zipf = gen_trace(TraceKind::Zipf(1.2), n, len, 61).expect("trace");
    match replay_structures(&zipf, n, &Structure::ALL, 20, 61) {
        Ok(ms) => {
            let (a, c, h) = (
                size(&ms, Structure::Array),
                size(&ms, Structure::Cc),
                size(&ms, Structure::Hist),
            );
            ok &= h < c && c < a && a / h >= 10.0;
            notes.push(format!(
                "zipf 1.2: hist {h:.2} < cc {c:.2} < array {a:.1} bits/block, array/hist {:.0}",
                a / h
            ));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("zipf: {e}"));
        }
    }
    drop(zipf);

    let uniform = gen_trace(TraceKind::Uniform, n, len, 62).expect("trace");
    match replay_structures(&uniform, n, &Structure::ALL, 20, 62) {
        Ok(ms) => {
            let (a, c, h) = (
                size(&ms, Structure::Array),
                size(&ms, Structure::Cc),
                size(&ms, Structure::Hist),
            );
            ok &= c > a && a / h >= 8.0;
            notes.push(format!(
                "uniform: cc {c:.1} > array {a:.1}, array/hist {:.1}",
                a / h
            ));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("uniform: {e}"));
        }
    }
    drop(uniform);

    let mut cc_bits = Vec::new();
    for m in [n, 2 * n] {
        let path = gen_trace(TraceKind::Pathological, m, 8 * m, 63).expect("trace");
        match replay_cc(&path, m, 20, [63; 16]) {
            Ok(r) => cc_bits.push(r.peak_client_bits as f64),
            Err(e) => {
                ok = false;
                notes.push(format!("pathological n = {m}: {e}"));
            }
        }
    }
    if cc_bits.len() == 2 {
        let floor = PATHOLOGICAL_C * n as f64 * (n as f64).log2();
        let growth = cc_bits[1] / cc_bits[0];
        let expected = 2.0 * 21.0 / 20.0;
        ok &= cc_bits[0] >= floor && (growth / expected - 1.0).abs() <= 0.15;
        notes.push(format!(
            "pathological: cc {:.2} n log n bits at 2^20, cc(2n)/cc(n) = {growth:.3} (expected {expected:.2} +/- 15%)",
            cc_bits[0] / (n as f64 * (n as f64).log2())
        ));
    }
    notes.push(secs(t.elapsed()));
    outcome(ok, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let mut steps = Vec::new();
    for l in [16u32, 20] {
        let n = 1u64 << l;
        let trace = gen_trace(TraceKind::Uniform, n, 4 * n, 7).expect("trace");
        match replay_hist(&trace, n) {
            Ok(m) => steps.push(m.element_steps_per_access),
            Err(e) => return outcome(false, format!("n = 2^{l}: {e}")),
        }
    }
    let growth = steps[1] / steps[0];
    let allowed = 1.5 * (20.0f64 / 16.0).powi(2);
    outcome(
        growth <= allowed,
        format!(
            "{:.1} element steps/access at 2^16, {:.1} at 2^20: growth {growth:.3} <= {allowed:.3}",
            steps[0], steps[1]
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (n, xor, seeds) in [
        (1u64 << 12, false, 0),
        (1 << 10, true, 0),
        (1 << 10, false, 30),
    ] {
        let len = 4 * n;
        let seq = gen_trace(TraceKind::Sequential, n, len, 8).expect("trace");
        let uni = gen_trace(TraceKind::Uniform, n, len, 8).expect("trace");
        let mut cfg = OramConfig::new(n, 16);
        cfg.seed = 8;
        cfg.xor_mode = xor;
        match audit_obliviousness(&seq, &uni, &cfg, seeds) {
            Ok(r) => {
                ok &= r.passed();
                let mut line = format!(
                    "n = 2^{}{}: {} + {} probes unique, shapes {}",
                    n.trailing_zeros(),
                    if xor { " xor" } else { "" },
                    r.uniqueness_first.probes,
                    r.uniqueness_second.probes,
                    if r.shape.identical {
                        "identical"
                    } else {
                        "differ"
                    }
                );
                if let Some(u) = &r.uniformity {
                    line += &format!(
                        ", slot chi-square p = {:.3} over {} seeds",
                        u.p_value, u.seeds
                    );
                }
                notes.push(line);
                notes.extend(r.failures());
            }
            Err(e) => {
                ok = false;
                notes.push(format!("audit: {e}"));
            }
        }
    }
    let n = 1 << 10;
    let seq = gen_trace(TraceKind::Sequential, n, 4 * n, 8).expect("trace");
    let uni = gen_trace(TraceKind::Uniform, n, 4 * n, 8).expect("trace");
    let mut broken = OramConfig::new(n, 16);
    broken.freeze_dummy_counter = true;
    match audit_obliviousness(&seq, &uni, &broken, 0) {
        Ok(r) => {
            let caught = !r.uniqueness_first.passed() && !r.uniqueness_second.passed();
            ok &= caught;
            notes.push(format!(
                "frozen dummy counter: {} repeated probes detected",
                r.uniqueness_first.violations
            ));
        }
        Err(e) => {
            // A protocol error is also a detection, but the audit itself
            // is what this criterion exercises.
            ok = false;
            notes.push(format!("fault-injected run errored: {e}"));
        }
    }
    outcome(ok, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0u64;
    let mut probes = 0u64;
    while probes < 100_000 {
        let universe = 1u64 << rng.random_range(4..24);
        let k = rng.random_range(0..(universe.min(4000) as usize));
        let set: BTreeSet<u64> = (0..k).map(|_| rng.random_range(0..universe)).collect();
        let sorted: Vec<u64> = set.into_iter().collect();
        let d = match RleDictionary::build_from_sorted(&sorted, universe, default_width(universe)) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("build: {e}")),
        };
        for _ in 0..1000 {
            let x = rng.random_range(0..universe);
            let rank = sorted.partition_point(|&y| y < x) as u64;
            bad += u64::from(d.rank(x) != rank);
            bad += u64::from(d.contains(x) != sorted.binary_search(&x).is_ok());
            if !sorted.is_empty() {
                let r = rng.random_range(0..sorted.len());
                bad += u64::from(d.index(r as u64).ok() != Some(sorted[r]));
            }
            probes += 1;
        }
        for &m in &sorted {
            bad += u64::from(d.index(d.rank(m)).ok() != Some(m));
        }
    }

    let mut merge_bad = 0;
    for _ in 0..1000 {
        let universe = 1u64 << rng.random_range(3..16);
        let levels = rng.random_range(1..8);
        let mut union = BTreeSet::new();
        let mut dicts = Vec::new();
        for _ in 0..levels {
            let k = rng.random_range(0..(universe.min(600) as usize));
            let s: BTreeSet<u64> = (0..k).map(|_| rng.random_range(0..universe)).collect();
            union.extend(s.iter().copied());
            let v: Vec<u64> = s.into_iter().collect();
            dicts.push(
                RleDictionary::build_from_sorted(&v, universe, default_width(universe))
                    .expect("build"),
            );
        }
        let refs: Vec<&RleDictionary> = dicts.iter().collect();
        let merged: Option<HashSet<u64>> = merge_streams(&refs).ok().map(|m| m.iter().collect());
        let want: HashSet<u64> = union.into_iter().collect();
        merge_bad += u32::from(merged.as_ref() != Some(&want));
    }
    outcome(
        bad == 0 && merge_bad == 0,
        format!("{bad} disagreements over {probes} rank/index/membership probes; {merge_bad}/1000 merges differ from set union"),
    )
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |c: u32| wanted.is_empty() || wanted.contains(&c);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |c: u32, name: &'static str, o: Outcome| {
        println!(
            "{} criterion {c} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((c, name, o));
    };

    // Criterion 2 is checked on the runs made for 1 and 3.
    let mut round_trips = Vec::new();
    if want(1) || want(2) {
        let (c1, t) = criterion_1();
        round_trips.extend(t);
        if want(1) {
            record(1, "functional equivalence", c1);
        }
    }
    let mut c3 = None;
    if want(3) || want(2) {
        let (o, t) = criterion_3();
        round_trips.extend(t);
        c3 = Some(o);
    }
    if want(2) {
        let ok = round_trips.iter().all(|t| t.0);
        let detail: Vec<&str> = round_trips.iter().map(|t| t.1.as_str()).collect();
        record(2, "single round trip", outcome(ok, detail.join("; ")));
    }
    if let (true, Some(o)) = (want(3), c3) {
        record(3, "amortized bandwidth", o);
    }
    let rest: [(u32, &str, Check); 6] = [
        (4, "shuffle exactness", criterion_4),
        (5, "historicalMembership memory", criterion_5),
        (6, "compression orderings", criterion_6),
        (7, "update-cost scaling", criterion_7),
        (8, "obliviousness audits", criterion_8),
        (9, "dictionary properties", criterion_9),
    ];
    for (c, name, f) in rest {
        if want(c) {
            record(c, name, f());
        }
    }

    let failed: Vec<u32> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
