//! Log-only storage engine: the log is the sole copy of the data, indexed
//! in memory by multiversion indexes per column group.

pub mod baseline;
pub mod bench;
pub mod buffer;
pub mod compaction;
pub mod crash;
pub mod engine;
pub mod error;
pub mod group_commit;
pub mod recovery;
pub mod schema;
pub mod store;
pub mod tablet;
pub mod txn;

pub use compaction::{CompactionConfig, CompactionReport, Retention};
pub use engine::{Engine, EngineConfig, EngineMetrics, Tuple};
pub use error::{ConflictReason, Error, Result};
pub use recovery::{RecoveryFault, RecoveryReport};
pub use schema::{ColumnDef, ColumnGroupDef, TableSchema};
pub use store::{SegmentStore, StoreConfig, SyncPolicy};
pub use txn::{Transaction, TxnStatus};
