//! Read buffer caching the latest committed version of recently used records.
//!
//! Eviction is delegated to a [`ReplacementPolicy`]; [`Lru`] is the default
//! and [`Fifo`] exists mostly to show the seam.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use logbase_core::{TabletId, Timestamp};
use parking_lot::Mutex;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub tablet: TabletId,
    pub group: u16,
    pub key: Vec<u8>,
}

/// Decides which cached record to evict.
pub trait ReplacementPolicy: Send {
    fn on_insert(&mut self, key: &CacheKey);
    fn on_access(&mut self, key: &CacheKey);
    fn on_remove(&mut self, key: &CacheKey);
    /// Picks the next victim and forgets it.
    fn evict(&mut self) -> Option<CacheKey>;
}

#[derive(Default)]
pub struct Lru {
    tick: u64,
    ticks: HashMap<CacheKey, u64>,
    order: BTreeMap<u64, CacheKey>,
}

impl Lru {
    fn bump(&mut self, key: &CacheKey) {
        self.tick += 1;
        if let Some(old) = self.ticks.insert(key.clone(), self.tick) {
            self.order.remove(&old);
        }
        self.order.insert(self.tick, key.clone());
    }
}

impl ReplacementPolicy for Lru {
    fn on_insert(&mut self, key: &CacheKey) {
        self.bump(key);
    }

    fn on_access(&mut self, key: &CacheKey) {
        self.bump(key);
    }

    fn on_remove(&mut self, key: &CacheKey) {
        if let Some(t) = self.ticks.remove(key) {
            self.order.remove(&t);
        }
    }

    fn evict(&mut self) -> Option<CacheKey> {
        let (_, key) = self.order.pop_first()?;
        self.ticks.remove(&key);
        Some(key)
    }
}

/// Evicts in insertion order; accesses do not matter.
#[derive(Default)]
pub struct Fifo {
    queue: VecDeque<CacheKey>,
}

impl ReplacementPolicy for Fifo {
    fn on_insert(&mut self, key: &CacheKey) {
        self.queue.push_back(key.clone());
    }

    fn on_access(&mut self, _: &CacheKey) {}

    fn on_remove(&mut self, key: &CacheKey) {
        self.queue.retain(|k| k != key);
    }

    fn evict(&mut self) -> Option<CacheKey> {
        self.queue.pop_front()
    }
}

struct Inner {
    map: HashMap<CacheKey, (Timestamp, Arc<[u8]>)>,
    policy: Box<dyn ReplacementPolicy>,
}

pub struct ReadBuffer {
    capacity: usize,
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for ReadBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReadBuffer").field("capacity", &self.capacity).finish_non_exhaustive()
    }
}

impl ReadBuffer {
    pub fn new(capacity: usize) -> Self {
        Self::with_policy(capacity, Box::new(Lru::default()))
    }

    pub fn with_policy(capacity: usize, policy: Box<dyn ReplacementPolicy>) -> Self {
        ReadBuffer {
            capacity,
            inner: Mutex::new(Inner { map: HashMap::new(), policy }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.lock().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<(Timestamp, Arc<[u8]>)> {
        if self.capacity == 0 {
            return None;
        }
        let mut inner = self.inner.lock();
        let hit = inner.map.get(key).cloned();
        match &hit {
            Some(_) => {
                inner.policy.on_access(key);
                self.hits.fetch_add(1, Ordering::Relaxed);
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
            }
        }
        hit
    }

    /// Like [`get`](Self::get) but only returns a hit for exactly version `ts`.
    pub fn get_version(&self, key: &CacheKey, ts: Timestamp) -> Option<Arc<[u8]>> {
        if self.capacity == 0 {
            return None;
        }
        let mut inner = self.inner.lock();
        let hit = inner.map.get(key).filter(|(t, _)| *t == ts).map(|(_, v)| v.clone());
        if hit.is_some() {
            inner.policy.on_access(key);
        }
        hit
    }

    /// Caches a value fetched from the log. `still_latest` runs under the
    /// buffer lock and must confirm `ts` is still the newest version, so a
    /// slow reader cannot overwrite a newer value installed by a writer.
    pub fn insert_fetched(&self, key: CacheKey, ts: Timestamp, value: Arc<[u8]>, still_latest: impl FnOnce() -> bool) {
        if self.capacity == 0 {
            return;
        }
        let mut inner = self.inner.lock();
        if inner.map.get(&key).is_some_and(|(t, _)| *t >= ts) || !still_latest() {
            return;
        }
        self.insert_locked(&mut inner, key, ts, value);
    }

    /// Refreshes an entry after a committed write, if the record is cached.
    pub fn update_if_present(&self, key: &CacheKey, ts: Timestamp, value: &[u8]) {
        if self.capacity == 0 {
            return;
        }
        let mut inner = self.inner.lock();
        if let Some(slot) = inner.map.get_mut(key) {
            if slot.0 < ts {
                *slot = (ts, Arc::from(value));
            }
        }
    }

    pub fn invalidate(&self, key: &CacheKey) {
        let mut inner = self.inner.lock();
        if inner.map.remove(key).is_some() {
            inner.policy.on_remove(key);
        }
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock();
        let keys: Vec<CacheKey> = inner.map.keys().cloned().collect();
        for k in keys {
            inner.map.remove(&k);
            inner.policy.on_remove(&k);
        }
    }

    fn insert_locked(&self, inner: &mut Inner, key: CacheKey, ts: Timestamp, value: Arc<[u8]>) {
        if inner.map.insert(key.clone(), (ts, value)).is_some() {
            inner.policy.on_access(&key);
            return;
        }
        inner.policy.on_insert(&key);
        while inner.map.len() > self.capacity {
            match inner.policy.evict() {
                Some(victim) => {
                    inner.map.remove(&victim);
                }
                None => break,
            }
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}
