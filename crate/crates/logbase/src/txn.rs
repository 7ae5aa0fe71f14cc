//! Timestamp authority, write locks and per-transaction bookkeeping for
//! multiversion optimistic concurrency control.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use logbase_core::{TabletId, Timestamp, TxnId};
use parking_lot::{Condvar, Mutex};

/// Issues snapshot and commit timestamps from one counter.
///
/// A commit timestamp stays "in flight" until the commit is visible in the
/// index. Snapshots wait for every in-flight commit below them, so a snapshot
/// `s` sees exactly the commits with timestamp `<= s`.
#[derive(Debug)]
pub struct TimestampAuthority {
    state: Mutex<ClockState>,
    drained: Condvar,
}

#[derive(Debug)]
struct ClockState {
    next: Timestamp,
    in_flight: BTreeSet<Timestamp>,
}

impl TimestampAuthority {
    pub fn new(next: Timestamp) -> Self {
        TimestampAuthority { state: Mutex::new(ClockState { next: next.max(1), in_flight: BTreeSet::new() }), drained: Condvar::new() }
    }

    /// A fresh snapshot timestamp.
    pub fn begin_snapshot(&self) -> Timestamp {
        let mut st = self.state.lock();
        let s = st.next;
        st.next += 1;
        while st.in_flight.first().is_some_and(|&t| t < s) {
            self.drained.wait(&mut st);
        }
        s
    }

    /// Allocates a commit timestamp and marks it in flight.
    pub fn begin_commit(&self) -> Timestamp {
        let mut st = self.state.lock();
        let ts = st.next;
        st.next += 1;
        st.in_flight.insert(ts);
        ts
    }

    pub fn finish_commit(&self, ts: Timestamp) {
        let mut st = self.state.lock();
        st.in_flight.remove(&ts);
        drop(st);
        self.drained.notify_all();
    }

    /// The timestamp the next caller will receive.
    pub fn peek_next(&self) -> Timestamp {
        self.state.lock().next
    }

    /// Newest timestamp handed out so far.
    pub fn last_issued(&self) -> Timestamp {
        self.state.lock().next - 1
    }

    pub fn advance_to(&self, next: Timestamp) {
        let mut st = self.state.lock();
        st.next = st.next.max(next);
    }
}

/// Identifies a record for write locking. The derived order (tablet, group,
/// key) is the global acquisition order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LockKey {
    pub tablet: TabletId,
    pub group: u16,
    pub key: Vec<u8>,
}

/// Exclusive write locks held during validation and the write phase.
#[derive(Debug, Default)]
pub struct LockTable {
    holders: Mutex<HashMap<LockKey, TxnId>>,
    released: Condvar,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn try_lock(&self, key: &LockKey, txn: TxnId) -> bool {
        let mut h = self.holders.lock();
        match h.get(key) {
            Some(&owner) => owner == txn,
            None => {
                h.insert(key.clone(), txn);
                true
            }
        }
    }

    /// Waits up to `timeout` for the lock.
    pub fn lock_timeout(&self, key: &LockKey, txn: TxnId, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut h = self.holders.lock();
        loop {
            match h.get(key) {
                Some(&owner) if owner == txn => return true,
                Some(_) => {
                    if self.released.wait_until(&mut h, deadline).timed_out() {
                        return false;
                    }
                }
                None => {
                    h.insert(key.clone(), txn);
                    return true;
                }
            }
        }
    }

    /// Blocks until some lock is released or `timeout` passes.
    pub fn wait_for_release(&self, timeout: Duration) {
        let mut h = self.holders.lock();
        let _ = self.released.wait_for(&mut h, timeout);
    }

    pub fn unlock_all<'a>(&self, keys: impl IntoIterator<Item = &'a LockKey>, txn: TxnId) {
        let mut h = self.holders.lock();
        for k in keys {
            if h.get(k) == Some(&txn) {
                h.remove(k);
            }
        }
        drop(h);
        self.released.notify_all();
    }

    pub fn holder(&self, key: &LockKey) -> Option<TxnId> {
        self.holders.lock().get(key).copied()
    }

    pub fn held_count(&self) -> usize {
        self.holders.lock().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnStatus {
    Active,
    Validating,
    Committed,
    Aborted,
}

/// A buffered modification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOp {
    Put(Vec<u8>),
    Delete,
}

/// A range predicate read by an update transaction, re-checked at commit.
#[derive(Debug, Clone)]
pub struct RangeRead {
    pub tablet: TabletId,
    pub group: u16,
    pub start: Vec<u8>,
    pub end: Option<Vec<u8>>,
    /// Keys visible in the range at the snapshot.
    pub keys: Vec<Vec<u8>>,
}

/// State of one transaction. Obtained from `Engine::begin`.
#[derive(Debug)]
pub struct Transaction {
    pub(crate) id: TxnId,
    pub(crate) snapshot_ts: Timestamp,
    /// Version observed per record; `None` records that the key was absent.
    pub(crate) read_set: BTreeMap<LockKey, Option<Timestamp>>,
    pub(crate) ranges: Vec<RangeRead>,
    /// Iterates in lock order.
    pub(crate) write_set: BTreeMap<LockKey, (String, WriteOp)>,
    pub(crate) status: TxnStatus,
}

impl Transaction {
    pub(crate) fn new(id: TxnId, snapshot_ts: Timestamp) -> Self {
        Transaction {
            id,
            snapshot_ts,
            read_set: BTreeMap::new(),
            ranges: Vec::new(),
            write_set: BTreeMap::new(),
            status: TxnStatus::Active,
        }
    }

    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn snapshot_ts(&self) -> Timestamp {
        self.snapshot_ts
    }

    pub fn status(&self) -> TxnStatus {
        self.status
    }

    pub fn is_read_only(&self) -> bool {
        self.write_set.is_empty()
    }

    pub fn write_count(&self) -> usize {
        self.write_set.len()
    }
}
