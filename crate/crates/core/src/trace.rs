//! Per-epoch convergence records, the versioned CSV format and run summaries.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_VERSION_LINE: &str = "# ddss-trace v1";

pub const TRACE_COLUMNS: [&str; 9] = [
    "epoch",
    "wall_time_s",
    "objective",
    "duality_gap",
    "active_blocks",
    "active_features",
    "nnz_coefficients",
    "coordinate_touches",
    "staleness",
];

/// One row of the convergence log, written at an epoch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: u64,
    pub wall_time_s: f64,
    pub objective: f64,
    pub duality_gap: f64,
    /// `q_s`: blocks the epoch's inner loop worked on.
    pub active_blocks: usize,
    /// `p_s`
    pub active_features: usize,
    pub nnz_coefficients: usize,
    /// Cumulative inner-loop coordinate writes.
    pub coordinate_touches: u64,
    /// Largest observed overlap (shared memory) or parameter lag (distributed).
    pub staleness: u64,
}

impl TraceRecord {
    /// Equality ignoring `wall_time_s`, comparing floats bit for bit.
    pub fn same_up_to_time(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.objective.to_bits() == other.objective.to_bits()
            && self.duality_gap.to_bits() == other.duality_gap.to_bits()
            && self.active_blocks == other.active_blocks
            && self.active_features == other.active_features
            && self.nnz_coefficients == other.nnz_coefficients
            && self.coordinate_touches == other.coordinate_touches
            && self.staleness == other.staleness
    }
}

/// Checks the ordering invariants every trace must satisfy.
pub fn check_trace(trace: &[TraceRecord]) -> Result<()> {
    for w in trace.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.epoch <= a.epoch {
            return Err(Error::Config(format!("trace epochs not increasing at {}", b.epoch)));
        }
        if b.wall_time_s < a.wall_time_s {
            return Err(Error::Config(format!("trace wall time decreases at epoch {}", b.epoch)));
        }
        if b.active_features > a.active_features {
            return Err(Error::Config(format!("active features grow at epoch {}", b.epoch)));
        }
        if b.coordinate_touches < a.coordinate_touches {
            return Err(Error::Config(format!("touch counter decreases at epoch {}", b.epoch)));
        }
    }
    Ok(())
}

pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRecord]) -> Result<()> {
    writeln!(out, "{TRACE_VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    if trace.is_empty() {
        w.write_record(TRACE_COLUMNS)?;
    }
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != TRACE_VERSION_LINE {
        return Err(Error::Parse { line: 1, msg: format!("expected {TRACE_VERSION_LINE:?}") });
    }
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != TRACE_COLUMNS {
        return Err(Error::Parse { line: 2, msg: format!("unexpected trace columns {header:?}") });
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Oracle comparison attached to a summary when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub objective: f64,
    pub gap: f64,
    pub objective_diff: f64,
    pub equicorrelation: Vec<usize>,
    pub survivors_within_equicorrelation: bool,
    /// Eliminated blocks carrying oracle mass above `1e-9`.
    pub false_eliminations: Vec<usize>,
}

/// Final line of a run's standard output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub backend: String,
    pub lambda: f64,
    pub lambda_max: f64,
    pub eta: f64,
    pub inner: usize,
    pub epochs_run: u64,
    pub final_objective: f64,
    pub final_gap: f64,
    pub total_time_s: f64,
    pub survivors: Vec<usize>,
    pub active_features: usize,
    pub nnz_coefficients: usize,
    pub coordinate_touches: u64,
    pub max_staleness: u64,
    pub speedup: Option<f64>,
    pub oracle: Option<OracleCheck>,
}

impl RunSummary {
    /// Equality ignoring timing fields.
    pub fn same_up_to_time(&self, other: &Self) -> bool {
        let strip = |s: &Self| Self { total_time_s: 0.0, speedup: None, ..s.clone() };
        strip(self) == strip(other)
    }
}
