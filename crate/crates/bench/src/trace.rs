//! Workload traces: synthetic generators and CSV ingest.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceOp {
    #[serde(rename = "r")]
    Read,
    #[serde(rename = "w")]
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub op: TraceOp,
    pub address: u64,
    /// Seed for the written payload; `None` for reads.
    pub payload_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TraceKind {
    Uniform,
    Zipf(f64),
    Sequential,
    /// `1, 3, 5, ..., n - 1`, repeated.
    Pathological,
}

impl TraceKind {
    pub fn parse(dist: &str, phi: f64) -> Result<Self> {
        match dist {
            "uniform" => Ok(Self::Uniform),
            "zipf" if phi > 1.0 => Ok(Self::Zipf(phi)),
            "zipf" => Err(BenchError::Usage(format!(
                "zipf skew must exceed 1, got {phi}"
            ))),
            "seq" | "sequential" => Ok(Self::Sequential),
            "path" | "pathological" => Ok(Self::Pathological),
            other => Err(BenchError::Usage(format!(
                "unknown distribution `{other}` (expected uniform, zipf, seq or path)"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Zipf(phi) => format!("zipf-{phi}"),
            Self::Sequential => "seq".into(),
            Self::Pathological => "path".into(),
        }
    }
}

/// Deterministic trace for `(kind, n, length, seed)`. Half of the
/// operations are writes. Zipf ranks are mapped through a random
/// permutation of the address space so popular blocks are scattered.
pub fn gen_trace(kind: TraceKind, n: u64, length: u64, seed: u64) -> Result<Vec<TraceRecord>> {
    if n == 0 {
        return Err(BenchError::Usage("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let addresses: Vec<u64> = match kind {
        TraceKind::Uniform => (0..length).map(|_| rng.random_range(0..n)).collect(),
        TraceKind::Sequential => (0..length).map(|i| i % n).collect(),
        TraceKind::Pathological => {
            if n < 2 {
                return Err(BenchError::Usage("pathological trace needs n >= 2".into()));
            }
            (0..length).map(|i| 2 * (i % (n / 2)) + 1).collect()
        }
        TraceKind::Zipf(phi) => {
            let zipf = Zipf::new(n as f64, phi)
                .map_err(|e| BenchError::Usage(format!("zipf parameters: {e}")))?;
            let mut perm: Vec<u64> = (0..n).collect();
            perm.shuffle(&mut rng);
            (0..length)
                .map(|_| perm[(zipf.sample(&mut rng) as u64 - 1).min(n - 1) as usize])
                .collect()
        }
    };
    Ok(addresses
        .into_iter()
        .enumerate()
        .map(|(i, address)| {
            if rng.random_bool(0.5) {
                TraceRecord {
                    op: TraceOp::Write,
                    address,
                    payload_seed: Some(seed ^ (i as u64 + 1)),
                }
            } else {
                TraceRecord {
                    op: TraceOp::Read,
                    address,
                    payload_seed: None,
                }
            }
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    op: String,
    address: u64,
}

pub fn write_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(CsvRow {
            op: match r.op {
                TraceOp::Read => "r".into(),
                TraceOp::Write => "w".into(),
            },
            address: r.address,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `op,address` rows and remaps addresses densely into `[0, n)` in
/// order of first occurrence. Write payload seeds are the row index.
pub fn ingest_csv<R: Read>(input: R, n: u64) -> Result<Vec<TraceRecord>> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut remap: HashMap<u64, u64> = HashMap::new();
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<CsvRow>().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let row = row.map_err(|e| BenchError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let op = match row.op.as_str() {
            "r" | "R" | "read" => TraceOp::Read,
            "w" | "W" | "write" => TraceOp::Write,
            other => {
                return Err(BenchError::Parse {
                    line,
                    msg: format!("unknown op `{other}`"),
                })
            }
        };
        let next = remap.len() as u64;
        let address = *remap.entry(row.address).or_insert(next);
        if address >= n {
            return Err(BenchError::Usage(format!(
                "trace touches more than n = {n} distinct addresses (line {line}); raise --n"
            )));
        }
        out.push(TraceRecord {
            op,
            address,
            payload_seed: (op == TraceOp::Write).then_some(i as u64),
        });
    }
    Ok(out)
}

pub fn ingest_csv_path(path: &Path, n: u64) -> Result<Vec<TraceRecord>> {
    ingest_csv(std::fs::File::open(path)?, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathological_pattern() {
        let t = gen_trace(TraceKind::Pathological, 8, 24, 0).unwrap();
        let a: Vec<u64> = t.iter().map(|r| r.address).collect();
        assert_eq!(&a[..8], &[1, 3, 5, 7, 1, 3, 5, 7]);
        assert!(a.chunks(4).all(|c| c == [1, 3, 5, 7]));
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [
            TraceKind::Uniform,
            TraceKind::Zipf(1.2),
            TraceKind::Sequential,
        ] {
            assert_eq!(
                gen_trace(kind, 100, 500, 7).unwrap(),
                gen_trace(kind, 100, 500, 7).unwrap()
            );
        }
        assert_ne!(
            gen_trace(TraceKind::Uniform, 100, 500, 7).unwrap(),
            gen_trace(TraceKind::Uniform, 100, 500, 8).unwrap()
        );
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(TraceKind::parse("zipf", 1.3).unwrap(), TraceKind::Zipf(1.3));
        assert!(TraceKind::parse("zipf", 1.0).is_err());
        assert!(TraceKind::parse("gauss", 1.0).is_err());
        assert_eq!(
            TraceKind::parse("path", 0.0).unwrap(),
            TraceKind::Pathological
        );
    }

    #[test]
    fn remap_follows_first_occurrence() {
        let csv = "op,address\nr,900\nw,12\nr,900\nw,5\n";
        let t = ingest_csv(csv.as_bytes(), 8).unwrap();
        let a: Vec<u64> = t.iter().map(|r| r.address).collect();
        assert_eq!(a, vec![0, 1, 0, 2]);
        assert_eq!(t[1].op, TraceOp::Write);
        assert_eq!(ingest_csv(csv.as_bytes(), 8).unwrap(), t);
    }

    #[test]
    fn csv_round_trip() {
        let t = gen_trace(TraceKind::Uniform, 50, 20, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("op,address\n"));
        let back = ingest_csv(buf.as_slice(), 50).unwrap();
        assert_eq!(back.len(), t.len());
        assert!(back.iter().zip(&t).all(|(a, b)| a.op == b.op));
    }

    #[test]
    fn bad_rows_report_line() {
        let err = ingest_csv("op,address\nr,1\nr,abc\n".as_bytes(), 8).unwrap_err();
        assert!(matches!(err, BenchError::Parse { line: 3, .. }), "{err}");
        let err = ingest_csv("op,address\nx,1\n".as_bytes(), 8).unwrap_err();
        assert!(matches!(err, BenchError::Parse { line: 2, .. }));
    }

    #[test]
    fn oversized_address_space_rejected() {
        let err = ingest_csv("op,address\nr,1\nr,2\nr,3\n".as_bytes(), 2).unwrap_err();
        assert!(err.to_string().contains("more than n = 2"));
    }
}
