//! Wall-clock time to a target gap across worker counts.

use std::io::Write;

use crate::dist::{dist_ddss_run, DistOptions};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::shared::sha_ddss_run;
use crate::solver::{SolverConfig, SolverOutput};
use crate::trace::TraceRecord;

pub const DEFAULT_TARGET_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelBackend {
    Shared,
    Dist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub workers: usize,
    /// `None` when the run never reached the target.
    pub time_to_gap_s: Option<f64>,
    /// Relative to the first row; `None` if either run missed the target.
    pub speedup: Option<f64>,
    pub final_gap: f64,
}

/// Wall time of the first epoch whose gap is at most `target`.
pub fn time_to_gap(trace: &[TraceRecord], target: f64) -> Option<f64> {
    trace.iter().find(|r| r.duality_gap <= target).map(|r| r.wall_time_s)
}

/// Runs `backend` once per entry of `counts`; speedups are against `counts[0]`.
pub fn speedup_report(
    problem: &Problem,
    cfg: &SolverConfig,
    backend: ParallelBackend,
    counts: &[usize],
    target: f64,
) -> Result<Vec<SpeedupRow>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Config("worker counts must be a nonempty list of positive integers".into()));
    }
    let mut runs = Vec::with_capacity(counts.len());
    for &w in counts {
        let cfg = SolverConfig { tau_assumed: w as f64, ..cfg.clone() };
        let out: SolverOutput = match backend {
            ParallelBackend::Shared => sha_ddss_run(problem, &cfg, w)?,
            ParallelBackend::Dist => dist_ddss_run(problem, &cfg, DistOptions::new(w))?,
        };
        runs.push((w, out.trace));
    }
    rows_from_traces(&runs, target)
}

/// One row per `(workers, trace)`; speedups are against the first run.
pub fn rows_from_traces(runs: &[(usize, Vec<TraceRecord>)], target: f64) -> Result<Vec<SpeedupRow>> {
    if runs.is_empty() {
        return Err(Error::Config("no traces to compare".into()));
    }
    let base = time_to_gap(&runs[0].1, target);
    Ok(runs
        .iter()
        .map(|(w, trace)| {
            let t = time_to_gap(trace, target);
            let speedup = match (base, t) {
                (Some(b), Some(t)) if b > 0.0 && t > 0.0 => Some(b / t),
                _ => None,
            };
            let final_gap = trace.last().map_or(f64::INFINITY, |r| r.duality_gap);
            SpeedupRow { workers: *w, time_to_gap_s: t, speedup, final_gap }
        })
        .collect())
}

/// `workers,time_to_gap_s,speedup,final_gap` with `unreached` for missing values.
pub fn write_speedup_csv<W: Write>(out: W, rows: &[SpeedupRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["workers", "time_to_gap_s", "speedup", "final_gap"])?;
    let show = |v: Option<f64>| v.map_or_else(|| "unreached".to_string(), |v| v.to_string());
    for r in rows {
        w.write_record([r.workers.to_string(), show(r.time_to_gap_s), show(r.speedup), r.final_gap.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: u64, t: f64, gap: f64) -> TraceRecord {
        TraceRecord {
            epoch,
            wall_time_s: t,
            objective: 1.0,
            duality_gap: gap,
            active_blocks: 1,
            active_features: 1,
            nnz_coefficients: 1,
            coordinate_touches: epoch,
            staleness: 0,
        }
    }

    #[test]
    fn first_epoch_under_target() {
        let trace = [rec(1, 0.1, 1e-3), rec(2, 0.2, 1e-7), rec(3, 0.3, 1e-9)];
        assert_eq!(time_to_gap(&trace, 1e-6), Some(0.2));
        assert_eq!(time_to_gap(&trace, 1e-12), None);
    }

    #[test]
    fn unreached_is_spelled_out() {
        let rows = [
            SpeedupRow { workers: 1, time_to_gap_s: Some(2.0), speedup: Some(1.0), final_gap: 1e-9 },
            SpeedupRow { workers: 2, time_to_gap_s: None, speedup: None, final_gap: 1e-3 },
        ];
        let mut buf = Vec::new();
        write_speedup_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "2,unreached,unreached,0.001");
    }

    #[test]
    fn baseline_speedup_is_one() {
        let runs = vec![(1, vec![rec(1, 0.4, 1e-8)]), (4, vec![rec(1, 0.1, 1e-8)]), (8, vec![rec(1, 0.1, 1e-2)])];
        let rows = rows_from_traces(&runs, 1e-6).unwrap();
        assert_eq!(rows[0].speedup, Some(1.0));
        assert_eq!(rows[1].speedup, Some(4.0));
        assert_eq!(rows[2].speedup, None);
    }
}
