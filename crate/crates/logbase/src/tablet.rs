//! A tablet: one key range of a table with a multiversion index per column group.

use std::sync::atomic::{AtomicU64, Ordering};

use logbase_core::{IdxKey, IndexEntry, LogAddress, Lsn, MvIndex, TabletId, Timestamp};
use parking_lot::RwLock;

use crate::schema::{TableSchema, TabletDef};

#[derive(Debug)]
pub struct GroupIndex {
    pub name: String,
    pub index: RwLock<MvIndex>,
    /// Index updates since this group's index was last persisted.
    pub updates: AtomicU64,
}

impl GroupIndex {
    fn new(name: &str) -> Self {
        GroupIndex { name: name.to_string(), index: RwLock::new(MvIndex::new()), updates: AtomicU64::new(0) }
    }

    pub fn apply_write(&self, key: &[u8], ts: Timestamp, addr: LogAddress, lsn: Lsn) -> bool {
        let entry = IndexEntry { key: IdxKey { primary_key: key.to_vec(), ts }, addr, lsn, tombstone: false };
        let changed = self.index.write().put(entry);
        self.updates.fetch_add(1, Ordering::AcqRel);
        changed
    }

    /// Drops every version of `key` and leaves a tombstone pointing at the
    /// Invalidated entry at `addr`.
    pub fn apply_delete(&self, key: &[u8], ts: Timestamp, addr: LogAddress, lsn: Lsn) {
        let tombstone = IndexEntry { key: IdxKey { primary_key: key.to_vec(), ts }, addr, lsn, tombstone: true };
        {
            let mut idx = self.index.write();
            idx.remove_all_versions(key);
            idx.put(tombstone);
        }
        self.updates.fetch_add(1, Ordering::AcqRel);
    }

    /// Redo form of [`apply_delete`](Self::apply_delete): versions written
    /// after the delete (higher LSN) survive.
    pub fn redo_delete(&self, key: &[u8], ts: Timestamp, addr: LogAddress, lsn: Lsn) -> bool {
        let tombstone = IndexEntry { key: IdxKey { primary_key: key.to_vec(), ts }, addr, lsn, tombstone: true };
        let mut idx = self.index.write();
        let removed = idx.remove_versions_before(key, lsn);
        idx.put(tombstone) || removed > 0
    }

    pub fn latest(&self, key: &[u8]) -> Option<IndexEntry> {
        self.index.read().get_latest(key)
    }

    pub fn latest_ts(&self, key: &[u8]) -> Option<Timestamp> {
        self.latest(key).map(|e| e.ts())
    }

    pub fn as_of(&self, key: &[u8], ts: Timestamp) -> Option<IndexEntry> {
        self.index.read().get_as_of(key, ts)
    }
}

#[derive(Debug)]
pub struct Tablet {
    pub def: TabletDef,
    pub groups: Vec<GroupIndex>,
}

impl Tablet {
    pub fn new(def: TabletDef, schema: &TableSchema) -> Self {
        let groups = schema.groups.iter().map(|g| GroupIndex::new(&g.name)).collect();
        Tablet { def, groups }
    }

    pub fn id(&self) -> TabletId {
        self.def.id
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.def.contains(key)
    }

    pub fn group(&self, index: usize) -> &GroupIndex {
        &self.groups[index]
    }

    pub fn entry_count(&self) -> usize {
        self.groups.iter().map(|g| g.index.read().entry_count()).sum()
    }
}
