//! One interface over the log-only engine and the WAL+data baseline.

use std::path::Path;

use crate::baseline::{BaselineConfig, BaselineEngine};
use crate::engine::{Engine, EngineConfig};
use crate::error::Result;
use crate::schema::TableSchema;

pub const TABLE: &str = "usertable";
pub const GROUP: &str = "fields";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoCounters {
    /// Bytes written to durable storage, counting each byte once.
    pub bytes_written: u64,
    /// Storage reads: log reads for the log-only engine, block reads for
    /// the baseline.
    pub storage_reads: u64,
    pub syncs: u64,
}

impl IoCounters {
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        IoCounters {
            bytes_written: self.bytes_written - earlier.bytes_written,
            storage_reads: self.storage_reads - earlier.storage_reads,
            syncs: self.syncs - earlier.syncs,
        }
    }
}

pub trait KvEngine: Send + Sync {
    fn name(&self) -> &'static str;
    fn put(&self, key: &[u8], value: &[u8]) -> Result<()>;
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>>;
    fn scan(&self, start: &[u8], end: Option<&[u8]>) -> Result<Vec<(Vec<u8>, Vec<u8>)>>;
    /// Every live record, in no particular order.
    fn scan_all(&self) -> Result<Vec<(Vec<u8>, Vec<u8>)>>;
    /// Makes everything written so far durable in its final form.
    fn finish_load(&self) -> Result<()>;
    fn io(&self) -> IoCounters;
}

impl KvEngine for Engine {
    fn name(&self) -> &'static str {
        "logbase"
    }

    fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        Engine::put(self, TABLE, key, GROUP, value).map(drop)
    }

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(Engine::get(self, TABLE, key, GROUP)?.map(|(v, _)| v))
    }

    fn scan(&self, start: &[u8], end: Option<&[u8]>) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.range_scan(TABLE, GROUP, start, end, self.snapshot())
    }

    fn scan_all(&self) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.full_scan(TABLE, GROUP, self.snapshot())
    }

    fn finish_load(&self) -> Result<()> {
        Ok(())
    }

    fn io(&self) -> IoCounters {
        let s = self.store().stats();
        IoCounters { bytes_written: s.bytes_appended, storage_reads: s.reads, syncs: s.syncs }
    }
}

impl KvEngine for BaselineEngine {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        BaselineEngine::put(self, key, value).map(drop)
    }

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        BaselineEngine::get(self, key)
    }

    fn scan(&self, start: &[u8], end: Option<&[u8]>) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.range_scan(start, end)
    }

    fn scan_all(&self) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.range_scan(&[], None)
    }

    fn finish_load(&self) -> Result<()> {
        self.flush()
    }

    fn io(&self) -> IoCounters {
        let s = self.stats();
        IoCounters { bytes_written: s.bytes_written(), storage_reads: s.block_reads, syncs: s.syncs }
    }
}

/// Opens the log-only engine and makes sure the benchmark table exists.
pub fn open_logbase(dir: &Path, config: EngineConfig) -> Result<Engine> {
    let e = Engine::open(dir, config)?;
    if e.schema(TABLE).is_err() {
        e.create_table(TableSchema::single_group(TABLE, GROUP), &[])?;
    }
    Ok(e)
}

pub fn open_baseline(dir: &Path, config: BaselineConfig) -> Result<BaselineEngine> {
    BaselineEngine::open(dir, config)
}
