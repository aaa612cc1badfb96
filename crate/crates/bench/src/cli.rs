//! Argument parsing and subcommand dispatch for the `rank-oram-bench` binary.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rank_oram::oram::OramConfig;
use rank_oram::server::{LogMode, StoreMode};
use rank_oram::shuffle::failure_stats;

use crate::audit::audit_obliviousness;
use crate::error::{BenchError, Result};
use crate::metrics::{MetricsDoc, Params, SweepPoint};
use crate::replay::{replay_cc, replay_structures, Structure};
use crate::run::run_oram_with;
use crate::trace::{gen_trace, ingest_csv_path, write_csv, TraceKind, TraceRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CORRECTNESS: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_SHUFFLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "rank-oram-bench",
    version,
    about = "Rank ORAM benchmarks and audits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace as `op,address` CSV.
    Gen(GenArgs),
    /// Replay the rebuild schedule against client structures.
    Replay(ReplayArgs),
    /// Run the full protocol against a plain-RAM oracle.
    Oram(OramArgs),
    /// Audit obliviousness: slot uniqueness, shape equality, uniformity.
    Audit(AuditArgs),
    /// Sweep n (ORAM and structures) and Z (compressed counters).
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Number of blocks (a power of two for replay, oram and audit).
    #[arg(long, default_value_t = 1 << 16)]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the metrics JSON document here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the flat metrics CSV here (for `gen`: the trace itself).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Uniform,
    Zipf,
    Seq,
    Path,
}

impl Dist {
    fn as_str(self) -> &'static str {
        match self {
            Dist::Uniform => "uniform",
            Dist::Zipf => "zipf",
            Dist::Seq => "seq",
            Dist::Path => "path",
        }
    }
}

#[derive(Debug, Args)]
pub struct Workload {
    #[arg(long, value_enum, default_value_t = Dist::Zipf)]
    pub dist: Dist,
    /// Zipf skew.
    #[arg(long, default_value_t = 1.2)]
    pub phi: f64,
    /// Trace length; defaults depend on the subcommand.
    #[arg(long)]
    pub length: Option<u64>,
    /// Read `op,address` CSV instead of generating.
    #[arg(long, conflicts_with_all = ["dist", "phi"])]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ServerKind {
    Mem,
    Disk,
}

#[derive(Debug, Args)]
pub struct Protocol {
    #[arg(long = "block-size", default_value_t = 32)]
    pub block_size: usize,
    /// Levels kept in client memory; defaults to L/2.
    #[arg(long = "client-levels")]
    pub client_levels: Option<u32>,
    /// Fold each probe batch into one block on the server.
    #[arg(long)]
    pub xor: bool,
    #[arg(long, value_enum, default_value_t = ServerKind::Mem)]
    pub server: ServerKind,
    /// Directory for `--server disk` (default: a fresh temp directory).
    #[arg(long = "server-dir")]
    pub server_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub workload: Workload,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub workload: Workload,
    #[arg(long, default_value = "array,cc,hist")]
    pub structures: String,
    /// Segment parameter of compressed counters.
    #[arg(long = "Z", default_value_t = rank_oram::baselines::counters::DEFAULT_Z)]
    pub z: usize,
}

#[derive(Debug, Args)]
pub struct OramArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub workload: Workload,
    #[command(flatten)]
    pub protocol: Protocol,
    /// Export the server access log as `op,area,slot,epoch` CSV.
    #[arg(long = "access-log")]
    pub access_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub protocol: Protocol,
    /// Accesses per workload (default 4n).
    #[arg(long)]
    pub length: Option<u64>,
    /// Seeds pooled in the slot-uniformity test; 0 skips it.
    #[arg(long, default_value_t = 30)]
    pub seeds: u32,
    /// Fault injection: dummy probes stop advancing their counter.
    #[arg(long = "freeze-dummy-counter")]
    pub freeze_dummy_counter: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub workload: Workload,
    #[command(flatten)]
    pub protocol: Protocol,
    /// Smallest n of the sweep; n doubles up to `--n`.
    #[arg(long = "n-min", default_value_t = 1 << 10)]
    pub n_min: u64,
    /// Comma-separated Z values for the compressed-counters sweep at `--n`.
    #[arg(long = "Z", default_value = "20,200,2000,20000")]
    pub z: String,
    #[arg(long, default_value = "array,cc,hist")]
    pub structures: String,
}

fn load_trace(
    w: &Workload,
    n: u64,
    seed: u64,
    default_len: u64,
) -> Result<(Vec<TraceRecord>, Params)> {
    let mut p = Params {
        n,
        seed,
        ..Params::default()
    };
    let trace = match &w.trace {
        Some(path) => {
            p.trace_file = Some(path.display().to_string());
            ingest_csv_path(path, n)?
        }
        None => {
            let kind = TraceKind::parse(w.dist.as_str(), w.phi)?;
            p.dist = Some(kind.name());
            gen_trace(kind, n, w.length.unwrap_or(default_len), seed)?
        }
    };
    p.length = Some(trace.len() as u64);
    Ok((trace, p))
}

fn oram_config(
    n: u64,
    seed: u64,
    proto: &Protocol,
) -> Result<(OramConfig, Option<tempdir::Scratch>)> {
    let mut cfg = OramConfig::new(n, proto.block_size);
    cfg.seed = seed;
    cfg.client_levels = proto.client_levels;
    cfg.xor_mode = proto.xor;
    let mut scratch = None;
    if proto.server == ServerKind::Disk {
        let dir = match &proto.server_dir {
            Some(d) => d.clone(),
            None => {
                let s = tempdir::Scratch::new()?;
                let d = s.path().to_path_buf();
                scratch = Some(s);
                d
            }
        };
        cfg.store = StoreMode::Disk(dir);
    }
    Ok((cfg, scratch))
}

fn fill_protocol_params(p: &mut Params, proto: &Protocol) {
    p.block_size = Some(proto.block_size);
    p.client_levels = proto.client_levels;
    p.xor = Some(proto.xor);
    p.server = Some(
        match proto.server {
            ServerKind::Mem => "mem",
            ServerKind::Disk => "disk",
        }
        .into(),
    );
}

/// Disk-backed runs without `--server-dir` use a directory removed on drop.
mod tempdir {
    use std::path::{Path, PathBuf};

    pub struct Scratch(PathBuf);

    impl Scratch {
        pub fn new() -> std::io::Result<Self> {
            let base = std::env::temp_dir();
            for i in 0u32.. {
                let p = base.join(format!("rank-oram-{}-{i}", std::process::id()));
                match std::fs::create_dir(&p) {
                    Ok(()) => return Ok(Self(p)),
                    Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                    Err(e) => return Err(e),
                }
            }
            unreachable!()
        }

        pub fn path(&self) -> &Path {
            &self.0
        }
    }

    impl Drop for Scratch {
        fn drop(&mut self) {
            let _ = std::fs::remove_dir_all(&self.0);
        }
    }
}

fn emit(doc: &MetricsDoc, common: &Common) -> Result<()> {
    match &common.out {
        Some(path) => doc.write_json(path)?,
        None => println!("{}", doc.to_json()?),
    }
    if let Some(path) = &common.csv {
        doc.write_csv(std::fs::File::create(path)?)?;
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let (trace, _) = load_trace(&a.workload, a.common.n, a.common.seed, 4 * a.common.n)?;
    match &a.common.csv {
        Some(path) => write_csv(&trace, std::fs::File::create(path)?)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(&trace, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_replay(a: &ReplayArgs) -> Result<i32> {
    let structures = Structure::parse_list(&a.structures)?;
    let (trace, mut params) = load_trace(&a.workload, a.common.n, a.common.seed, 8 * a.common.n)?;
    params.z = Some(a.z);
    let mut doc = MetricsDoc::new("replay", params);
    doc.structures = replay_structures(&trace, a.common.n, &structures, a.z, a.common.seed)?;
    emit(&doc, &a.common)?;
    Ok(EXIT_OK)
}

fn oram_verdict(doc: &mut MetricsDoc) -> i32 {
    let Some(run) = doc.oram.clone() else {
        return EXIT_OK;
    };
    if !run.correct() {
        doc.fail(format!(
            "{} reads disagreed with the oracle (first at access {:?})",
            run.mismatches, run.first_mismatch
        ));
        return EXIT_CORRECTNESS;
    }
    if !run.single_round_trip {
        doc.fail("some access used more than one online round trip");
        return EXIT_CORRECTNESS;
    }
    if !run.log_matches_counters {
        doc.fail("server log totals disagree with transfer counters");
        return EXIT_CORRECTNESS;
    }
    EXIT_OK
}

fn cmd_oram(a: &OramArgs) -> Result<i32> {
    let (trace, mut params) = load_trace(&a.workload, a.common.n, a.common.seed, 4 * a.common.n)?;
    fill_protocol_params(&mut params, &a.protocol);
    let (mut cfg, _scratch) = oram_config(a.common.n, a.common.seed, &a.protocol)?;
    if a.access_log.is_none() {
        // Slot-level logs of long runs are large; the counters suffice.
        cfg.log = LogMode::Off;
    }
    let mut doc = MetricsDoc::new("oram", params);
    let (run, oram) = run_oram_with(&trace, cfg)?;
    if let Some(path) = &a.access_log {
        oram.server().export_log_csv(path)?;
    }
    doc.oram = Some(run);
    let code = oram_verdict(&mut doc);
    emit(&doc, &a.common)?;
    Ok(code)
}

fn cmd_audit(a: &AuditArgs) -> Result<i32> {
    let n = a.common.n;
    let len = a.length.unwrap_or(4 * n);
    let mut params = Params {
        n,
        seed: a.common.seed,
        dist: Some("seq-vs-uniform".into()),
        length: Some(len),
        ..Params::default()
    };
    fill_protocol_params(&mut params, &a.protocol);
    let (mut cfg, _scratch) = oram_config(n, a.common.seed, &a.protocol)?;
    cfg.freeze_dummy_counter = a.freeze_dummy_counter;
    let first = gen_trace(TraceKind::Sequential, n, len, a.common.seed)?;
    let second = gen_trace(TraceKind::Uniform, n, len, a.common.seed)?;
    let report = audit_obliviousness(&first, &second, &cfg, a.seeds)?;
    let mut doc = MetricsDoc::new("audit", params);
    for f in report.failures() {
        doc.fail(f);
    }
    let code = if report.passed() { EXIT_OK } else { EXIT_AUDIT };
    doc.audit = Some(report);
    emit(&doc, &a.common)?;
    Ok(code)
}

fn parse_z_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.parse::<usize>() {
            Ok(z) if z >= 2 => Ok(z),
            _ => Err(BenchError::Usage(format!(
                "bad Z value `{p}` (need an integer >= 2)"
            ))),
        })
        .collect()
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let structures = Structure::parse_list(&a.structures)?;
    let zs = parse_z_list(&a.z)?;
    if !a.n_min.is_power_of_two() || a.n_min < 2 || a.n_min > a.common.n {
        return Err(BenchError::Usage(format!(
            "--n-min must be a power of two in [2, {}]",
            a.common.n
        )));
    }
    let mut params = Params {
        n: a.common.n,
        seed: a.common.seed,
        ..Params::default()
    };
    fill_protocol_params(&mut params, &a.protocol);
    let mut doc = MetricsDoc::new("sweep", params);
    let mut code = EXIT_OK;
    let mut n = a.n_min;
    while n <= a.common.n {
        let (trace, p) = load_trace(&a.workload, n, a.common.seed, 4 * n)?;
        doc.params.dist = p.dist;
        let (mut cfg, _scratch) = oram_config(n, a.common.seed, &a.protocol)?;
        cfg.log = LogMode::Off;
        let (run, _) = run_oram_with(&trace, cfg)?;
        let per_block = 8.0 * a.protocol.block_size as f64;
        let point = SweepPoint {
            n,
            z: None,
            structures: replay_structures(&trace, n, &structures, 20, a.common.seed)?,
            buffer_blocks_per_sqrt_n: Some(
                run.stats.block_buffer_bits as f64 / ((n as f64).sqrt() * per_block),
            ),
            oram: Some(run),
        };
        let mut probe = MetricsDoc::new("sweep", Params::default());
        probe.oram = point.oram.clone();
        let c = oram_verdict(&mut probe);
        if c != EXIT_OK {
            code = c;
            for f in probe.verdict.failures {
                doc.fail(format!("n = {n}: {f}"));
            }
        }
        doc.sweep.push(point);
        n *= 2;
    }
    let n = a.common.n;
    let (trace, _) = load_trace(&a.workload, n, a.common.seed, 8 * n)?;
    let mut key = [0u8; 16];
    key[..8].copy_from_slice(&a.common.seed.to_le_bytes());
    for z in zs {
        doc.sweep.push(SweepPoint {
            n,
            z: Some(z),
            structures: vec![replay_cc(&trace, n, z, key)?],
            oram: None,
            buffer_blocks_per_sqrt_n: None,
        });
    }
    emit(&doc, &a.common)?;
    Ok(code)
}

/// Shuffle failure rates at `n` (not wired to a subcommand flag; used by
/// the acceptance suite and kept here so the JSON shape is shared).
pub fn shuffle_doc(n: u64, trials: u32, c: f64, seed: u64) -> Result<MetricsDoc> {
    let mut doc = MetricsDoc::new(
        "shuffle",
        Params {
            n,
            seed,
            ..Params::default()
        },
    );
    let s = failure_stats(n, trials, c, seed)?;
    if s.failures > 0 {
        doc.fail(format!("{} of {trials} shuffles overflowed", s.failures));
    }
    doc.shuffle = Some(s);
    Ok(doc)
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Oram(a) => cmd_oram(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Maps an error to its exit status.
pub fn exit_code(e: &BenchError) -> i32 {
    match e {
        BenchError::Oram(rank_oram::Error::ShuffleFailure { .. }) => EXIT_SHUFFLE,
        BenchError::Oram(rank_oram::Error::InvalidArgument(_))
        | BenchError::Usage(_)
        | BenchError::Parse { .. } => EXIT_USAGE,
        BenchError::Oram(_) => EXIT_CORRECTNESS,
        BenchError::Io(_) | BenchError::Csv(_) | BenchError::Json(_) => EXIT_USAGE,
    }
}

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
