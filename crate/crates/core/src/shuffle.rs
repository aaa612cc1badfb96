//! Oblivious dummy shuffles: `m` input blocks in, `2n` output slots out.
//!
//! [`short_queue_shuffle`] is the bandwidth-efficient version. The client
//! splits the input into `R` random buckets and the output into `C = R`
//! chunks of width at most `2S` (`S = ceil(sqrt n)`). Each round downloads
//! one bucket, routes its real blocks to the queue of their destination
//! chunk, and appends a fixed number of blocks from every queue to that
//! chunk's temporary region, padding with dummies when a queue is empty.
//! A second pass downloads each temporary chunk, adds what is left in its
//! queue, places reals at their destination and fills the gaps with fresh
//! dummies. The server sees a sequence of slot touches that depends only on
//! `m`, `n` and the bucket seed.
//!
//! [`naive_dummy_shuffle`] materializes everything client-side and is the
//! oracle the queue version is tested against. Both produce byte-identical
//! output for the same inputs and destination map.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crypto::cipher::{decrypt_block, encrypt_block, make_dummy, Block, Context, Key};
use crate::crypto::prp::Prp;
use crate::error::{invalid, Result};
use crate::server::{Area, LogMode, ServerStore};
use crate::Error;

/// Queue budget multiplier: the job fails once the combined queue
/// occupancy exceeds `c * sqrt(n)`.
pub const DEFAULT_C: f64 = 6.0;

/// Cipher context area for blocks parked in the temporary region.
pub const TEMP_CONTEXT: u32 = u32::MAX;

/// One shuffle input: either a server slot with the context it was
/// encrypted under, or a block the client already holds.
#[derive(Clone, Debug)]
pub enum Source {
    Server { area: Area, slot: u64, ctx: Context },
    Local(Block),
}

/// Where the output goes and how it is encrypted.
#[derive(Clone, Copy, Debug)]
pub struct Output {
    pub area: Area,
    pub level: u32,
    pub epoch: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct ShuffleParams {
    pub c: f64,
    pub seed: u64,
    /// Distinguishes temporary-region ciphertexts across jobs.
    pub temp_epoch: u64,
}

impl Default for ShuffleParams {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            seed: 0,
            temp_epoch: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ShuffleReport {
    pub n: u64,
    pub inputs: u64,
    pub bandwidth_down: u64,
    pub bandwidth_up: u64,
    pub peak_queue: usize,
    /// Largest client working set in blocks (queues plus one bucket or chunk).
    pub peak_buffer: usize,
    pub failed: bool,
}

struct Geometry {
    s: u64,
    chunks: u64,
}

impl Geometry {
    fn new(n: u64) -> Self {
        let s = (n as f64).sqrt().ceil() as u64;
        let s = if s * s < n { s + 1 } else { s }.max(1);
        Self {
            s,
            chunks: n.div_ceil(s),
        }
    }

    fn chunk_start(&self, d: u64) -> u64 {
        2 * self.s * d
    }

    fn chunk_width(&self, d: u64, n: u64) -> u64 {
        (2 * self.s).min(2 * n - self.chunk_start(d))
    }
}

fn check_dest(dest: u64, n: u64, seen: &mut [bool]) -> Result<()> {
    if dest >= 2 * n {
        return invalid(format!("destination {dest} outside [0, {})", 2 * n));
    }
    if std::mem::replace(&mut seen[dest as usize], true) {
        return invalid(format!("two real blocks mapped to slot {dest}"));
    }
    Ok(())
}

fn open(
    key: &Key,
    server_ct: Option<crate::crypto::cipher::Ciphertext>,
    src: &Source,
) -> Result<Block> {
    match (src, server_ct) {
        (Source::Server { ctx, .. }, Some(ct)) => decrypt_block(key, *ctx, &ct),
        (Source::Local(b), _) => Ok(b.clone()),
        (Source::Server { .. }, None) => unreachable!("server source without reply"),
    }
}

/// Downloads `group` (one offline round trip if any of it is remote) and
/// returns the blocks in the same order.
fn fetch_group(server: &mut ServerStore, key: &Key, group: &[&Source]) -> Result<Vec<Block>> {
    let q: Vec<(Area, u64)> = group
        .iter()
        .filter_map(|s| match s {
            Source::Server { area, slot, .. } => Some((*area, *slot)),
            Source::Local(_) => None,
        })
        .collect();
    let mut replies = if q.is_empty() {
        Vec::new()
    } else {
        server.read_offline(&q)?
    }
    .into_iter();
    group
        .iter()
        .map(|src| {
            let ct = match src {
                Source::Server { .. } => replies.next(),
                Source::Local(_) => None,
            };
            open(key, ct, src)
        })
        .collect()
}

/// Encrypts and uploads output slots `[start, start + blocks.len())`.
fn upload_chunk(
    server: &mut ServerStore,
    key: &Key,
    out: Output,
    start: u64,
    blocks: Vec<Option<Block>>,
    block_size: usize,
) -> Result<()> {
    for (i, b) in blocks.into_iter().enumerate() {
        let slot = start + i as u64;
        let ct = match b {
            Some(b) => encrypt_block(key, Context::new(out.level, out.epoch, slot), &b),
            None => make_dummy(key, out.level, out.epoch, slot, block_size),
        };
        server.write_slot(out.area, slot, &ct)?;
    }
    Ok(())
}

fn check_payloads(inputs: &[Source], block_size: usize) -> Result<()> {
    for s in inputs {
        if let Source::Local(b) = s {
            if b.payload.len() != block_size {
                return invalid("local block payload has the wrong size");
            }
        }
    }
    Ok(())
}

/// Short-queue oblivious shuffle. `dest` maps a real block's address to its
/// output slot in `[0, 2n)` and must be injective over the reals present.
/// Dummy inputs are consumed and discarded.
///
/// Bandwidth is `m_server + 6n` blocks, where `m_server` counts the inputs
/// held by the server; `7n` when the input is `n` server-held blocks.
#[allow(clippy::too_many_arguments)]
pub fn short_queue_shuffle(
    server: &mut ServerStore,
    key: &Key,
    block_size: usize,
    inputs: &[Source],
    n: u64,
    dest: &dyn Fn(u64) -> Result<u64>,
    out: Output,
    params: &ShuffleParams,
) -> Result<ShuffleReport> {
    if n == 0 {
        return invalid("shuffle needs n >= 1");
    }
    check_payloads(inputs, block_size)?;
    let before = server.stats();
    let geo = Geometry::new(n);
    let rounds = geo.chunks;
    let m = inputs.len() as u64;
    let threshold = params.c * (n as f64).sqrt();

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    server.allocate(Area::Temp, 2 * n)?;
    let mut queues: Vec<VecDeque<(u64, Block)>> =
        (0..geo.chunks).map(|_| VecDeque::new()).collect();
    let mut emitted = vec![0u64; geo.chunks as usize];
    let mut seen = vec![false; 2 * n as usize];
    let mut reals = 0u64;
    let mut report = ShuffleReport {
        n,
        inputs: m,
        ..Default::default()
    };
    let temp_ctx = |slot| Context::new(TEMP_CONTEXT, params.temp_epoch, slot);

    for j in 0..rounds {
        let lo = (j * m / rounds) as usize;
        let hi = ((j + 1) * m / rounds) as usize;
        let group: Vec<&Source> = order[lo..hi].iter().map(|&i| &inputs[i]).collect();
        for block in fetch_group(server, key, &group)? {
            let Some(a) = block.address() else { continue };
            reals += 1;
            if reals > n {
                return invalid(format!("more than {n} real blocks in shuffle input"));
            }
            let d = dest(a)?;
            check_dest(d, n, &mut seen)?;
            queues[(d / (2 * geo.s)) as usize].push_back((d, block));
        }
        let occupancy: usize = queues.iter().map(VecDeque::len).sum();
        report.peak_queue = report.peak_queue.max(occupancy);
        report.peak_buffer = report.peak_buffer.max(occupancy + (hi - lo));
        if occupancy as f64 > threshold {
            server.drop_area(Area::Temp)?;
            return Err(Error::ShuffleFailure {
                occupancy,
                threshold,
            });
        }
        for d in 0..geo.chunks {
            let w = geo.chunk_width(d, n);
            let quota = (j + 1) * w / rounds - j * w / rounds;
            for _ in 0..quota {
                let slot = geo.chunk_start(d) + emitted[d as usize];
                emitted[d as usize] += 1;
                let block = match queues[d as usize].pop_front() {
                    Some((_, b)) => b,
                    None => Block::dummy(slot, block_size),
                };
                server.write_slot(
                    Area::Temp,
                    slot,
                    &encrypt_block(key, temp_ctx(slot), &block),
                )?;
            }
        }
    }

    server.allocate(out.area, 2 * n)?;
    for d in 0..geo.chunks {
        let start = geo.chunk_start(d);
        let w = geo.chunk_width(d, n);
        let slots: Vec<u64> = (start..start + w).collect();
        let parked = server.read_slots(Area::Temp, &slots)?;
        let mut chunk: Vec<Option<Block>> = vec![None; w as usize];
        report.peak_buffer = report
            .peak_buffer
            .max(w as usize + queues[d as usize].len());
        for (slot, ct) in slots.iter().zip(parked) {
            let b = decrypt_block(key, temp_ctx(*slot), &ct)?;
            if let Some(a) = b.address() {
                chunk[(dest(a)? - start) as usize] = Some(b);
            }
        }
        for (dst, b) in queues[d as usize].drain(..) {
            chunk[(dst - start) as usize] = Some(b);
        }
        upload_chunk(server, key, out, start, chunk, block_size)?;
    }
    server.drop_area(Area::Temp)?;

    let after = server.stats();
    report.bandwidth_down = after.down() - before.down();
    report.bandwidth_up = after.up() - before.up();
    Ok(report)
}

/// Reference shuffle: download every input, place reals, upload all `2n`
/// slots. Also the build path when all inputs are already client-side.
pub fn naive_dummy_shuffle(
    server: &mut ServerStore,
    key: &Key,
    block_size: usize,
    inputs: &[Source],
    n: u64,
    dest: &dyn Fn(u64) -> Result<u64>,
    out: Output,
) -> Result<ShuffleReport> {
    if n == 0 {
        return invalid("shuffle needs n >= 1");
    }
    check_payloads(inputs, block_size)?;
    let before = server.stats();
    let group: Vec<&Source> = inputs.iter().collect();
    let blocks = fetch_group(server, key, &group)?;
    let mut table: Vec<Option<Block>> = vec![None; 2 * n as usize];
    let mut seen = vec![false; 2 * n as usize];
    let mut reals = 0;
    for b in blocks {
        let Some(a) = b.address() else { continue };
        reals += 1;
        if reals > n {
            return invalid(format!("more than {n} real blocks in shuffle input"));
        }
        let d = dest(a)?;
        check_dest(d, n, &mut seen)?;
        table[d as usize] = Some(b);
    }
    server.allocate(out.area, 2 * n)?;
    upload_chunk(server, key, out, 0, table, block_size)?;
    let after = server.stats();
    Ok(ShuffleReport {
        n,
        inputs: inputs.len() as u64,
        bandwidth_down: after.down() - before.down(),
        bandwidth_up: after.up() - before.up(),
        peak_queue: 0,
        peak_buffer: 2 * n as usize,
        failed: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureStats {
    pub n: u64,
    pub trials: u32,
    pub c: f64,
    pub failures: u32,
    pub failure_rate: f64,
    pub peak_queue_max: usize,
    pub peak_queue_mean: f64,
    pub threshold: f64,
}

/// Runs `trials` independent jobs of `n` real blocks under fresh bucket
/// seeds and random destination permutations, counting queue overflows.
/// Peaks of failed trials are the occupancy that tripped the threshold.
pub fn failure_stats(n: u64, trials: u32, c: f64, seed: u64) -> Result<FailureStats> {
    const B: usize = 8;
    let key = Key::from_seed(seed);
    let inputs: Vec<Source> = (0..n)
        .map(|a| Source::Local(Block::real(a, vec![0; B])))
        .collect();
    let mut failures = 0;
    let mut peaks = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        let mut server = ServerStore::in_memory(crate::crypto::cipher::ciphertext_width(B));
        server.set_log_mode(LogMode::Off);
        let trial_seed = seed ^ (u64::from(t) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut prp_seed = [0u8; 16];
        prp_seed[..8].copy_from_slice(&trial_seed.to_le_bytes());
        let pi = Prp::new(2 * n, prp_seed)?;
        let params = ShuffleParams {
            c,
            seed: trial_seed,
            temp_epoch: 0,
        };
        let out = Output {
            area: Area::Staging,
            level: 0,
            epoch: 0,
        };
        match short_queue_shuffle(
            &mut server,
            &key,
            B,
            &inputs,
            n,
            &|a| pi.eval(a),
            out,
            &params,
        ) {
            Ok(r) => peaks.push(r.peak_queue),
            Err(Error::ShuffleFailure { occupancy, .. }) => {
                failures += 1;
                peaks.push(occupancy);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FailureStats {
        n,
        trials,
        c,
        failures,
        failure_rate: f64::from(failures) / f64::from(trials.max(1)),
        peak_queue_max: peaks.iter().copied().max().unwrap_or(0),
        peak_queue_mean: peaks.iter().sum::<usize>() as f64 / peaks.len().max(1) as f64,
        threshold: c * (n as f64).sqrt(),
    })
}
