//! Batches log entries from concurrent committers into one append and sync.
//!
//! The first waiting committer becomes the leader. It collects requests until
//! every announced committer has queued (or a short window passes), stamps
//! LSNs, writes the batch and hands results back to the followers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use logbase_core::{LogAddress, LogEntry, Lsn};
use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};
use crate::store::SegmentStore;

pub const DEFAULT_WINDOW: Duration = Duration::from_millis(2);

/// Where each entry of a request landed.
pub type Placement = Vec<(LogAddress, Lsn)>;

struct Request {
    id: u64,
    entries: Vec<LogEntry>,
}

#[derive(Default)]
struct BatchState {
    queue: Vec<Request>,
    done: HashMap<u64, Result<Placement>>,
    leader: bool,
    next_id: u64,
}

pub struct GroupCommitter {
    store: Arc<SegmentStore>,
    window: Duration,
    state: Mutex<BatchState>,
    wake: Condvar,
    announced: AtomicUsize,
    last_lsn: AtomicU64,
    batches: AtomicU64,
}

/// Keeps a committer counted as "about to submit" while alive.
pub struct Announcement<'a>(&'a GroupCommitter);

impl Drop for Announcement<'_> {
    fn drop(&mut self) {
        self.0.announced.fetch_sub(1, Ordering::AcqRel);
        self.0.wake.notify_all();
    }
}

/// Errors are not `Clone`; followers get an equivalent copy.
fn duplicate(e: &Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), io.to_string())),
        Error::StorageFull { needed, limit } => Error::StorageFull { needed: *needed, limit: *limit },
        Error::PayloadTooLarge { len, limit } => Error::PayloadTooLarge { len: *len, limit: *limit },
        Error::StoreClosed => Error::StoreClosed,
        other => Error::Corrupt(other.to_string()),
    }
}

impl GroupCommitter {
    pub fn new(store: Arc<SegmentStore>, window: Duration, last_lsn: Lsn) -> Self {
        GroupCommitter {
            store,
            window,
            state: Mutex::new(BatchState::default()),
            wake: Condvar::new(),
            announced: AtomicUsize::new(0),
            last_lsn: AtomicU64::new(last_lsn),
            batches: AtomicU64::new(0),
        }
    }

    /// Registers an upcoming [`submit`](Self::submit) so a leader waits for it.
    pub fn announce(&self) -> Announcement<'_> {
        self.announced.fetch_add(1, Ordering::AcqRel);
        Announcement(self)
    }

    pub fn last_lsn(&self) -> Lsn {
        self.last_lsn.load(Ordering::Acquire)
    }

    pub fn set_last_lsn(&self, lsn: Lsn) {
        self.last_lsn.fetch_max(lsn, Ordering::AcqRel);
    }

    pub fn batches(&self) -> u64 {
        self.batches.load(Ordering::Relaxed)
    }

    /// Appends `entries` contiguously and durably. LSNs are assigned here.
    pub fn submit(&self, entries: Vec<LogEntry>) -> Result<Placement> {
        let mut st = self.state.lock();
        let id = st.next_id;
        st.next_id += 1;
        st.queue.push(Request { id, entries });
        self.wake.notify_all();
        loop {
            if let Some(res) = st.done.remove(&id) {
                return res;
            }
            if st.leader {
                self.wake.wait(&mut st);
                continue;
            }
            st.leader = true;
            let deadline = Instant::now() + self.window;
            while st.queue.len() < self.announced.load(Ordering::Acquire) {
                if self.wake.wait_until(&mut st, deadline).timed_out() {
                    break;
                }
            }
            let batch = std::mem::take(&mut st.queue);
            drop(st);
            let results = self.write_batch(batch);
            st = self.state.lock();
            st.done.extend(results);
            st.leader = false;
            self.wake.notify_all();
        }
    }

    fn write_batch(&self, mut batch: Vec<Request>) -> Vec<(u64, Result<Placement>)> {
        let mut lsn = self.last_lsn();
        let mut payloads = Vec::new();
        let mut encode_err = None;
        for req in &mut batch {
            for e in &mut req.entries {
                lsn += 1;
                e.set_lsn(lsn);
                match e.encode_bounded(self.store.config().max_payload()) {
                    Ok(p) => payloads.push(p),
                    Err(err) => encode_err = Some(Error::from(err)),
                }
            }
        }
        self.batches.fetch_add(1, Ordering::Relaxed);
        let written = match encode_err {
            Some(e) => Err(e),
            None => self.store.append_batch(&payloads),
        };
        // LSNs are burned even on failure so they never repeat.
        self.last_lsn.fetch_max(lsn, Ordering::AcqRel);
        match written {
            Ok(addrs) => {
                let mut addrs = addrs.into_iter();
                batch
                    .into_iter()
                    .map(|req| {
                        let placed = req.entries.iter().map(|e| (addrs.next().expect("one address per entry"), e.lsn())).collect();
                        (req.id, Ok(placed))
                    })
                    .collect()
            }
            Err(e) => batch.into_iter().map(|req| (req.id, Err(duplicate(&e)))).collect(),
        }
    }
}
