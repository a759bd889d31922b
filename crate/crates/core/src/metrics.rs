//! Per-query execution metrics.
//!
//! `bytes_on_wire` counts serialized PAGE_RESULT frame bytes received — the
//! engine's network-traffic measure. `rows_evaluated_locally` counts rows
//! the compute node pushed through its own visibility/filter/projection
//! pipeline (raw pages, buffer-pool copies, and resolved ambiguous
//! records); it proxies compute-side CPU deterministically.

use crate::wire::RequestStats;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PageCounts {
    pub raw: u64,
    pub ndp: u64,
    pub ndp_empty: u64,
    pub copied_from_cache: u64,
}

impl PageCounts {
    pub fn total(&self) -> u64 {
        self.raw + self.ndp + self.ndp_empty + self.copied_from_cache
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreCounters {
    pub ndp_admitted: u64,
    pub ndp_skipped: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub predicate_compilations: u64,
}

impl StoreCounters {
    pub fn absorb(&mut self, s: &RequestStats) {
        self.ndp_admitted += s.ndp_admitted;
        self.ndp_skipped += s.ndp_skipped;
        self.cache_hits += s.cache_hits;
        self.cache_misses += s.cache_misses;
        self.predicate_compilations += s.predicate_compilations;
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct QueryMetrics {
    pub bytes_on_wire: u64,
    pub bytes_sent: u64,
    pub pages: PageCounts,
    pub rows_evaluated_locally: u64,
    pub rows_emitted: u64,
    pub wall_time_micros: u64,
    /// Cursor NDP-frame high water mark, for the memory-bound checks.
    pub ndp_frames_high_water: u64,
    pub per_store: BTreeMap<u32, StoreCounters>,
}

impl QueryMetrics {
    /// Merges a parallel worker's metrics into the leader's.
    pub fn absorb(&mut self, other: &QueryMetrics) {
        self.bytes_on_wire += other.bytes_on_wire;
        self.bytes_sent += other.bytes_sent;
        self.pages.raw += other.pages.raw;
        self.pages.ndp += other.pages.ndp;
        self.pages.ndp_empty += other.pages.ndp_empty;
        self.pages.copied_from_cache += other.pages.copied_from_cache;
        self.rows_evaluated_locally += other.rows_evaluated_locally;
        self.rows_emitted += other.rows_emitted;
        self.ndp_frames_high_water = self.ndp_frames_high_water.max(other.ndp_frames_high_water);
        for (id, c) in &other.per_store {
            let mine = self.per_store.entry(*id).or_default();
            mine.ndp_admitted += c.ndp_admitted;
            mine.ndp_skipped += c.ndp_skipped;
            mine.cache_hits += c.cache_hits;
            mine.cache_misses += c.cache_misses;
            mine.predicate_compilations += c.predicate_compilations;
        }
    }
}
