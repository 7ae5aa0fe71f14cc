//! Benchmark harness shared by the `logbase-bench` binary and the tests.

pub mod engines;
pub mod keys;
pub mod metrics;
pub mod runner;

pub use engines::{IoCounters, KvEngine};
pub use keys::{KeyChooser, KeyDistribution};
pub use metrics::{MetricsReport, PhaseMetrics};
pub use runner::{parse_config_file, parse_mix, run, BenchConfig, Command, EngineKind, WorkloadSpec};
