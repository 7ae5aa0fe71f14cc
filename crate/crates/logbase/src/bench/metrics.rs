//! Per-phase benchmark results, written as CSV and as a readable summary.
//!
//! CSV columns, in order: `engine, phase, ops, elapsed_s, throughput_ops_s,
//! p50_us, p95_us, p99_us, bytes_written, storage_reads, syncs,
//! recovery_ms, redo_entries, note`. Empty cells mean "not measured".

use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use super::engines::IoCounters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseMetrics {
    pub engine: String,
    pub phase: String,
    pub ops: u64,
    pub elapsed_s: f64,
    pub throughput_ops_s: f64,
    pub p50_us: Option<f64>,
    pub p95_us: Option<f64>,
    pub p99_us: Option<f64>,
    pub bytes_written: u64,
    pub storage_reads: u64,
    pub syncs: u64,
    pub recovery_ms: Option<f64>,
    pub redo_entries: Option<u64>,
    pub note: String,
}

impl PhaseMetrics {
    pub fn new(engine: &str, phase: &str) -> Self {
        PhaseMetrics { engine: engine.into(), phase: phase.into(), ..PhaseMetrics::default() }
    }

    /// Fills in counts, throughput and latency percentiles.
    pub fn with_timing(mut self, ops: u64, elapsed: Duration, latencies: &mut LatencyRecorder) -> Self {
        self.ops = ops;
        self.elapsed_s = elapsed.as_secs_f64();
        self.throughput_ops_s = if self.elapsed_s > 0.0 { ops as f64 / self.elapsed_s } else { 0.0 };
        self.p50_us = latencies.percentile(50.0);
        self.p95_us = latencies.percentile(95.0);
        self.p99_us = latencies.percentile(99.0);
        self
    }

    pub fn with_io(mut self, io: IoCounters) -> Self {
        self.bytes_written = io.bytes_written;
        self.storage_reads = io.storage_reads;
        self.syncs = io.syncs;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct LatencyRecorder {
    micros: Vec<f64>,
    sorted: bool,
}

impl LatencyRecorder {
    pub fn record(&mut self, d: Duration) {
        self.micros.push(d.as_secs_f64() * 1e6);
        self.sorted = false;
    }

    pub fn merge(&mut self, other: LatencyRecorder) {
        self.micros.extend(other.micros);
        self.sorted = false;
    }

    /// Nearest-rank percentile in microseconds.
    pub fn percentile(&mut self, p: f64) -> Option<f64> {
        if self.micros.is_empty() {
            return None;
        }
        if !self.sorted {
            self.micros.sort_by(f64::total_cmp);
            self.sorted = true;
        }
        let rank = ((p / 100.0) * self.micros.len() as f64).ceil() as usize;
        Some(self.micros[rank.clamp(1, self.micros.len()) - 1])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub phases: Vec<PhaseMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, p: PhaseMetrics) {
        self.phases.push(p);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        for p in &self.phases {
            w.serialize(p).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn micros(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.1}us"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.phases {
            write!(
                f,
                "{:<9} {:<22} ops={:<8} {:>10.0} ops/s  p50={} p95={} p99={}  written={}B reads={} syncs={}",
                p.engine,
                p.phase,
                p.ops,
                p.throughput_ops_s,
                micros(p.p50_us),
                micros(p.p95_us),
                micros(p.p99_us),
                p.bytes_written,
                p.storage_reads,
                p.syncs
            )?;
            if let Some(ms) = p.recovery_ms {
                write!(f, " recovery={ms:.1}ms")?;
            }
            if let Some(n) = p.redo_entries {
                write!(f, " redo={n}")?;
            }
            if !p.note.is_empty() {
                write!(f, "  [{}]", p.note)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_use_nearest_rank() {
        let mut r = LatencyRecorder::default();
        for us in 1..=100 {
            r.record(Duration::from_micros(us));
        }
        assert!((r.percentile(50.0).unwrap() - 50.0).abs() < 1e-6);
        assert!((r.percentile(99.0).unwrap() - 99.0).abs() < 1e-6);
        assert_eq!(LatencyRecorder::default().percentile(50.0), None);
    }

    #[test]
    fn csv_has_fixed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut report = MetricsReport::default();
        report.push(PhaseMetrics::new("logbase", "load").with_note("x"));
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "engine,phase,ops,elapsed_s,throughput_ops_s,p50_us,p95_us,p99_us,bytes_written,storage_reads,syncs,recovery_ms,redo_entries,note\n"
        ));
        assert!(report.to_string().contains("load"));
    }
}
