//! Compute-side buffer pool.
//!
//! Regular pages live in the page table with LRU replacement and are
//! shared by every scan. Pushdown result pages are private to the scan
//! that requested them: they are never entered into the page table or the
//! LRU, only accounted against the pool's capacity and returned to the
//! free pool the moment the cursor finishes the page. Frame reservations
//! shrink rather than block when the pool is tight, so scans degrade to
//! smaller batches instead of deadlocking.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug)]
pub struct BufferPool {
    inner: Mutex<Inner>,
    /// Highest concurrent NDP frame usage ever observed.
    ndp_high_water: AtomicU64,
}

#[derive(Debug)]
struct Inner {
    capacity: usize,
    page_table: HashMap<u64, CachedPage>,
    tick: u64,
    ndp_in_use: usize,
}

#[derive(Debug)]
struct CachedPage {
    bytes: Arc<[u8]>,
    last_used: u64,
}

impl BufferPool {
    pub fn new(capacity: usize) -> Arc<BufferPool> {
        Arc::new(BufferPool {
            inner: Mutex::new(Inner {
                capacity: capacity.max(1),
                page_table: HashMap::new(),
                tick: 0,
                ndp_in_use: 0,
            }),
            ndp_high_water: AtomicU64::new(0),
        })
    }

    /// Residency check for regular pages; touches the LRU position.
    pub fn lookup(&self, page_id: u64) -> Option<Arc<[u8]>> {
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        inner.page_table.get_mut(&page_id).map(|p| {
            p.last_used = tick;
            p.bytes.clone()
        })
    }

    /// Inserts a regular page, evicting the least recently used page when
    /// the pool is full. No-ops if the page cannot fit beside the NDP area.
    pub fn insert_regular(&self, page_id: u64, bytes: Arc<[u8]>) {
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        if let Some(slot) = inner.page_table.get_mut(&page_id) {
            *slot = CachedPage { bytes, last_used: tick };
            return;
        }
        while inner.page_table.len() + inner.ndp_in_use >= inner.capacity {
            let victim = match inner.page_table.iter().min_by_key(|(_, p)| p.last_used) {
                Some((id, _)) => *id,
                None => return, // nothing evictable: the NDP area holds every frame
            };
            inner.page_table.remove(&victim);
        }
        inner.page_table.insert(page_id, CachedPage { bytes, last_used: tick });
    }

    /// Reserves up to `want` NDP frames, evicting regular pages if that
    /// frees room, and returns how many were granted (possibly zero).
    pub fn reserve_ndp(&self, want: usize) -> usize {
        let mut inner = self.inner.lock().unwrap();
        let mut free = inner.capacity.saturating_sub(inner.page_table.len() + inner.ndp_in_use);
        while free < want && !inner.page_table.is_empty() {
            let victim = *inner.page_table.iter().min_by_key(|(_, p)| p.last_used).unwrap().0;
            inner.page_table.remove(&victim);
            free += 1;
        }
        let granted = want.min(free);
        inner.ndp_in_use += granted;
        self.ndp_high_water.fetch_max(inner.ndp_in_use as u64, Ordering::Relaxed);
        granted
    }

    pub fn release_ndp(&self, count: usize) {
        let mut inner = self.inner.lock().unwrap();
        debug_assert!(inner.ndp_in_use >= count, "releasing more NDP frames than reserved");
        inner.ndp_in_use -= count;
    }

    pub fn ndp_frames_in_use(&self) -> usize {
        self.inner.lock().unwrap().ndp_in_use
    }

    pub fn ndp_high_water(&self) -> u64 {
        self.ndp_high_water.load(Ordering::Relaxed)
    }

    pub fn resident_pages(&self) -> Vec<u64> {
        let inner = self.inner.lock().unwrap();
        let mut ids: Vec<u64> = inner.page_table.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn resident_count(&self) -> usize {
        self.inner.lock().unwrap().page_table.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(b: u8) -> Arc<[u8]> {
        vec![b; 8].into()
    }

    #[test]
    fn lru_eviction_prefers_cold_pages() {
        let pool = BufferPool::new(2);
        pool.insert_regular(1, bytes(1));
        pool.insert_regular(2, bytes(2));
        pool.lookup(1); // warm page 1
        pool.insert_regular(3, bytes(3));
        assert!(pool.lookup(1).is_some());
        assert!(pool.lookup(2).is_none());
        assert!(pool.lookup(3).is_some());
    }

    #[test]
    fn ndp_reservations_never_enter_the_page_table() {
        let pool = BufferPool::new(4);
        pool.insert_regular(1, bytes(1));
        let got = pool.reserve_ndp(2);
        assert_eq!(got, 2);
        assert_eq!(pool.resident_pages(), vec![1]);
        assert_eq!(pool.ndp_frames_in_use(), 2);
        pool.release_ndp(2);
        assert_eq!(pool.ndp_frames_in_use(), 0);
        assert_eq!(pool.ndp_high_water(), 2);
    }

    #[test]
    fn reservation_shrinks_instead_of_blocking() {
        let pool = BufferPool::new(3);
        assert_eq!(pool.reserve_ndp(2), 2);
        // One frame left: a request for 4 gets 1.
        assert_eq!(pool.reserve_ndp(4), 1);
        // Nothing left: zero granted, caller degrades.
        assert_eq!(pool.reserve_ndp(1), 0);
        pool.release_ndp(3);
    }

    #[test]
    fn reservation_evicts_regular_pages_for_room() {
        let pool = BufferPool::new(2);
        pool.insert_regular(1, bytes(1));
        pool.insert_regular(2, bytes(2));
        assert_eq!(pool.reserve_ndp(1), 1);
        assert_eq!(pool.resident_count(), 1);
    }
}
