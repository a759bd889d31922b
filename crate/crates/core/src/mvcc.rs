//! Read views and transaction-id allocation.
//!
//! The engine does not need a full lock manager: writes come from a single
//! mutator thread and each write commits on apply. What matters for
//! pushdown correctness is the read view, because the descriptor carries
//! only its low watermark. A page store treats any record whose
//! transaction id is at or above that watermark as ambiguous and returns
//! it untouched; the compute node owns the full view (low and high
//! watermarks plus the active set) and the undo log needed to resolve
//! those records.

use std::collections::BTreeSet;
use std::sync::Mutex;

/// A consistent snapshot for one scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadView {
    /// Every transaction id below this is committed.
    pub low_watermark: u64,
    /// Transaction ids at or above this did not exist when the view was taken.
    pub high_watermark: u64,
    /// Transactions in flight when the view was taken.
    pub active_txns: BTreeSet<u64>,
}

impl ReadView {
    /// Visibility under the full view. The descriptor-side check is the
    /// weaker `trx_id < low_watermark`; this is the authoritative one.
    pub fn is_visible(&self, trx_id: u64) -> bool {
        trx_id < self.low_watermark
            || (trx_id < self.high_watermark && !self.active_txns.contains(&trx_id))
    }

    /// A view that sees everything committed before `next_txn_id` with no
    /// active transactions.
    pub fn up_to(next_txn_id: u64) -> ReadView {
        ReadView {
            low_watermark: next_txn_id,
            high_watermark: next_txn_id,
            active_txns: BTreeSet::new(),
        }
    }
}

/// Allocates transaction ids and produces read views. Id 1 is reserved for
/// the bulk loader so that freshly loaded rows are visible to every view.
#[derive(Debug)]
pub struct TxnManager {
    inner: Mutex<TxnInner>,
}

#[derive(Debug)]
struct TxnInner {
    next: u64,
    active: BTreeSet<u64>,
}

pub const LOAD_TRX_ID: u64 = 1;

impl TxnManager {
    pub fn new() -> TxnManager {
        TxnManager { inner: Mutex::new(TxnInner { next: LOAD_TRX_ID + 1, active: BTreeSet::new() }) }
    }

    pub fn begin(&self) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let id = inner.next;
        inner.next += 1;
        inner.active.insert(id);
        id
    }

    pub fn commit(&self, txn_id: u64) {
        let mut inner = self.inner.lock().unwrap();
        inner.active.remove(&txn_id);
    }

    pub fn read_view(&self) -> ReadView {
        let inner = self.inner.lock().unwrap();
        ReadView {
            low_watermark: inner.active.first().copied().unwrap_or(inner.next),
            high_watermark: inner.next,
            active_txns: inner.active.clone(),
        }
    }
}

impl Default for TxnManager {
    fn default() -> Self {
        TxnManager::new()
    }
}
