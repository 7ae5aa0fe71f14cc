use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use logbase::bench::{parse_config_file, run, BenchConfig, Command};

#[derive(Parser, Debug)]
#[command(name = "logbase-bench", about = "Benchmarks the log-only engine against a WAL+data baseline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Sequential bulk write of every record.
    Load,
    /// Random point reads after a load.
    ReadRandom,
    /// One full scan after a load.
    ScanSeq,
    /// Short range scans after a load.
    ScanRange,
    /// Reads and updates in the configured mix.
    Mixed,
    /// Read-only and read-modify-write transactions in the configured mix.
    TxnMixed,
    /// Load cost and restart cost for several checkpoint thresholds.
    CheckpointBench,
    /// Restart time after a load, with or without a mid-load checkpoint.
    RecoveryBench,
    /// Updates, a range-scan pass, compaction, and the range scans again.
    Compact,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Load => Command::Load,
            Cmd::ReadRandom => Command::ReadRandom,
            Cmd::ScanSeq => Command::ScanSeq,
            Cmd::ScanRange => Command::ScanRange,
            Cmd::Mixed => Command::Mixed,
            Cmd::TxnMixed => Command::TxnMixed,
            Cmd::CheckpointBench => Command::CheckpointBench,
            Cmd::RecoveryBench => Command::RecoveryBench,
            Cmd::Compact => Command::Compact,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug)]
struct Opts {
    /// key=value settings using the flag names below; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the per-phase CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// logbase or baseline.
    #[arg(long, global = true)]
    engine: Option<String>,
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[arg(long, global = true)]
    records: Option<u64>,
    #[arg(long, global = true)]
    record_size: Option<usize>,
    #[arg(long, global = true)]
    key_space: Option<u64>,
    #[arg(long, global = true)]
    ops: Option<u64>,
    #[arg(long, global = true)]
    warmup: Option<u64>,
    /// Read/update percentages, e.g. 5/95.
    #[arg(long, global = true)]
    mix: Option<String>,
    /// zipfian or uniform.
    #[arg(long, global = true)]
    dist: Option<String>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    clients: Option<usize>,
    #[arg(long, global = true)]
    scan_length: Option<u64>,
    #[arg(long, global = true)]
    segment_bytes: Option<u64>,
    #[arg(long, global = true)]
    flush_threshold: Option<u64>,
    /// Committed updates between checkpoints; 0 disables.
    #[arg(long, global = true)]
    checkpoint_every: Option<u64>,
    #[arg(long, global = true, value_enum)]
    cache: Option<OnOff>,
    #[arg(long, global = true, value_enum)]
    with_checkpoint: Option<OnOff>,
    /// Replace an existing engine directory.
    #[arg(long, global = true)]
    overwrite: bool,
}

fn on_off(v: OnOff) -> String {
    match v {
        OnOff::On => "on".into(),
        OnOff::Off => "off".into(),
    }
}

fn settings(opts: &Opts) -> Result<BTreeMap<String, String>, Box<dyn std::error::Error>> {
    let mut map = BTreeMap::new();
    if let Some(path) = &opts.config {
        for (k, v) in parse_config_file(&std::fs::read_to_string(path)?)? {
            map.insert(k, v);
        }
    }
    let flags: [(&str, Option<String>); 20] = [
        ("engine", opts.engine.clone()),
        ("dir", opts.dir.as_ref().map(|d| d.display().to_string())),
        ("records", opts.records.map(|v| v.to_string())),
        ("record-size", opts.record_size.map(|v| v.to_string())),
        ("key-space", opts.key_space.map(|v| v.to_string())),
        ("ops", opts.ops.map(|v| v.to_string())),
        ("warmup", opts.warmup.map(|v| v.to_string())),
        ("mix", opts.mix.clone()),
        ("dist", opts.dist.clone()),
        ("theta", opts.theta.map(|v| v.to_string())),
        ("seed", opts.seed.map(|v| v.to_string())),
        ("clients", opts.clients.map(|v| v.to_string())),
        ("scan-length", opts.scan_length.map(|v| v.to_string())),
        ("segment-bytes", opts.segment_bytes.map(|v| v.to_string())),
        ("flush-threshold", opts.flush_threshold.map(|v| v.to_string())),
        ("checkpoint-every", opts.checkpoint_every.map(|v| v.to_string())),
        ("cache", opts.cache.map(on_off)),
        ("with-checkpoint", opts.with_checkpoint.map(on_off)),
        ("overwrite", opts.overwrite.then(|| "on".to_string())),
        ("csv", None),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    Ok(map)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = (|| -> Result<(), Box<dyn std::error::Error>> {
        let mut map = settings(&cli.opts)?;
        let csv = map.remove("csv").map(PathBuf::from).or_else(|| cli.opts.csv.clone());
        let mut cfg = BenchConfig::default();
        cfg.apply_all(map.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let report = run(cli.command.into(), &cfg)?;
        print!("{report}");
        if let Some(path) = csv {
            report.write_csv(&path)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
