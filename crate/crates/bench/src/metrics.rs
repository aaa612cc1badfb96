//! The metrics document written by every subcommand, and its flat CSV view.
//!
//! Schema changes bump [`SCHEMA_VERSION`]; README.md describes the fields.

use std::io::Write;
use std::path::Path;

use rank_oram::shuffle::FailureStats;
use serde::Serialize;
use serde_json::Value;

use crate::audit::AuditReport;
use crate::error::Result;
use crate::replay::StructureMetrics;
use crate::run::OramRun;

pub const SCHEMA: &str = "rank-oram-bench/metrics";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, Serialize)]
pub struct Params {
    pub n: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_levels: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xor: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
}

/// One point of an `n` or `Z` sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub n: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<usize>,
    pub structures: Vec<StructureMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oram: Option<OramRun>,
    /// `block_buffer_bits / (sqrt(n) * 8B)`, flat when the working set
    /// scales with `sqrt(n)` blocks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffer_blocks_per_sqrt_n: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsDoc {
    pub schema: &'static str,
    pub version: u32,
    pub command: String,
    pub params: Params,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub structures: Vec<StructureMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oram: Option<OramRun>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<FailureStats>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
    pub verdict: Verdict,
}

impl MetricsDoc {
    pub fn new(command: &str, params: Params) -> Self {
        Self {
            schema: SCHEMA,
            version: SCHEMA_VERSION,
            command: command.into(),
            params,
            structures: Vec::new(),
            oram: None,
            audit: None,
            shuffle: None,
            sweep: Vec::new(),
            verdict: Verdict {
                passed: true,
                failures: Vec::new(),
            },
        }
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        self.verdict.passed = false;
        self.verdict.failures.push(why.into());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Every scalar leaf as a `path,value` row, e.g.
    /// `structures.2.bits_per_block,1.93`.
    pub fn flat_rows(&self) -> Result<Vec<(String, String)>> {
        let mut rows = Vec::new();
        flatten(&serde_json::to_value(self)?, String::new(), &mut rows);
        Ok(rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.flat_rows()? {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn flatten(v: &Value, prefix: String, rows: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                flatten(v, join(k), rows);
            }
        }
        Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                flatten(v, join(&i.to_string()), rows);
            }
        }
        Value::Null => {}
        Value::String(s) => rows.push((prefix, s.clone())),
        other => rows.push((prefix, other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_carries_schema_and_verdict() {
        let mut d = MetricsDoc::new(
            "replay",
            Params {
                n: 16,
                seed: 3,
                ..Params::default()
            },
        );
        d.fail("something broke");
        let v: Value = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["version"], SCHEMA_VERSION);
        assert_eq!(v["params"]["n"], 16);
        assert!(v["params"].get("xor").is_none());
        assert_eq!(v["verdict"]["passed"], false);
    }

    #[test]
    fn csv_flattens_nested_fields() {
        let d = MetricsDoc::new(
            "gen",
            Params {
                n: 8,
                ..Params::default()
            },
        );
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value\n"));
        assert!(text.contains("params.n,8\n"));
        assert!(text.contains("verdict.passed,true\n"));
    }
}
