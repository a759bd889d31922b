//! Undo logging for version reconstruction.
//!
//! Page stores cannot walk undo chains (the records may live elsewhere),
//! so every record they cannot prove visible comes back to the compute
//! node, which reconstructs the right version from these chains. Entries
//! per key run newest-first; each entry pairs the writing transaction with
//! the record image that preceded its write, or a tombstone when the write
//! created the row.

use crate::record::Record;
use crate::value::Value;
use std::collections::HashMap;
use std::sync::RwLock;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndoEntry {
    /// The transaction whose write this entry undoes.
    pub trx_id: u64,
    /// Record image before that write; `None` when the write created the row.
    pub prior: Option<Record>,
}

/// Chains keyed by (index id, primary key), newest entry first.
type Chains = HashMap<(u64, Vec<Value>), Vec<UndoEntry>>;

#[derive(Debug, Default)]
pub struct UndoLog {
    inner: RwLock<Chains>,
}

impl UndoLog {
    pub fn new() -> UndoLog {
        UndoLog::default()
    }

    /// Prepends an entry for a key's chain. Transaction ids must arrive in
    /// increasing order per key so chains stay strictly decreasing.
    pub fn push(&self, index_id: u64, pk: Vec<Value>, entry: UndoEntry) {
        let mut inner = self.inner.write().unwrap();
        let chain = inner.entry((index_id, pk)).or_default();
        debug_assert!(
            chain.first().is_none_or(|head| head.trx_id < entry.trx_id),
            "undo chain trx ids must strictly decrease newest-first"
        );
        chain.insert(0, entry);
    }

    /// The chain for a key, newest first. Empty when no write touched it.
    pub fn chain(&self, index_id: u64, pk: &[Value]) -> Vec<UndoEntry> {
        let inner = self.inner.read().unwrap();
        inner.get(&(index_id, pk.to_vec())).cloned().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
