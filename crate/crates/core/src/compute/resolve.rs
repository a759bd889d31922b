//! Version reconstruction for records the page stores could not judge.
//!
//! A record comes back ambiguous when its transaction id is at or above
//! the descriptor's low watermark. Only the compute node holds the full
//! read view and the undo log, so only it can decide: either the current
//! version is visible after all (committed between the watermarks), or
//! some older image from the undo chain is the right one, or the row does
//! not exist for this view at all.

use crate::btree::UndoLog;
use crate::mvcc::ReadView;
use crate::record::Record;
use crate::schema::Schema;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("record with trx {trx} has no undo entry while invisible to the view")]
    MissingUndo { trx: u64 },
    #[error("undo chain for trx {0} does not reach a visible version")]
    BrokenChain(u64),
}

/// Resolves a possibly-invisible record to the version this read view is
/// entitled to see, or `None` when the row does not exist for the view.
/// The returned record may be delete-marked; the caller's pipeline skips
/// it like any other visible deletion.
pub fn resolve_ambiguous(
    record: &Record,
    view: &ReadView,
    undo: &UndoLog,
    schema: &Schema,
) -> Result<Option<Record>, ResolveError> {
    if view.is_visible(record.trx_id) {
        return Ok(Some(record.clone()));
    }
    let chain = undo.chain(schema.index_id, record.key(schema));
    if chain.is_empty() {
        return Err(ResolveError::MissingUndo { trx: record.trx_id });
    }
    // Walk newest to oldest: find the entry undoing the version we hold,
    // then keep stepping to older images until one is visible.
    let mut current_trx = record.trx_id;
    let mut position = chain.iter().position(|e| e.trx_id == current_trx);
    while let Some(at) = position {
        match &chain[at].prior {
            // The write that produced `current_trx` created the row: it
            // did not exist before, so the view cannot see it.
            None => return Ok(None),
            Some(prior) => {
                if view.is_visible(prior.trx_id) {
                    return Ok(Some(prior.clone()));
                }
                current_trx = prior.trx_id;
                position = chain[at + 1..]
                    .iter()
                    .position(|e| e.trx_id == current_trx)
                    .map(|p| p + at + 1);
            }
        }
    }
    Err(ResolveError::BrokenChain(current_trx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btree::UndoEntry;
    use crate::schema::Schema;
    use crate::value::{ColumnType as Ct, TypeTag as T, Value};
    use std::collections::BTreeSet;

    fn schema() -> Schema {
        Schema::new("t", vec![("id", Ct::new(T::Int64)), ("v", Ct::new(T::Int64))], 1, 1).unwrap()
    }

    fn rec(trx: u64, id: i64, v: i64) -> Record {
        Record::ordinary(trx, vec![Value::Int64(id), Value::Int64(v)])
    }

    #[test]
    fn committed_between_watermarks_is_visible_as_is() {
        // trx 100: not active, below the high watermark. The undo log is
        // irrelevant; the current version already qualifies.
        let view = ReadView { low_watermark: 50, high_watermark: 200, active_txns: BTreeSet::new() };
        let undo = UndoLog::new();
        let got = resolve_ambiguous(&rec(100, 1, 7), &view, &undo, &schema()).unwrap();
        assert_eq!(got, Some(rec(100, 1, 7)));
    }

    #[test]
    fn active_writer_resolves_to_prior_image() {
        let view = ReadView {
            low_watermark: 50,
            high_watermark: 200,
            active_txns: BTreeSet::from([100]),
        };
        let undo = UndoLog::new();
        undo.push(
            1,
            vec![Value::Int64(1)],
            UndoEntry { trx_id: 100, prior: Some(rec(7, 1, 2)) },
        );
        let got = resolve_ambiguous(&rec(100, 1, 9), &view, &undo, &schema()).unwrap();
        assert_eq!(got, Some(rec(7, 1, 2)));
    }

    #[test]
    fn tombstone_means_the_row_did_not_exist() {
        let view = ReadView { low_watermark: 50, high_watermark: 60, active_txns: BTreeSet::new() };
        let undo = UndoLog::new();
        undo.push(1, vec![Value::Int64(1)], UndoEntry { trx_id: 90, prior: None });
        let got = resolve_ambiguous(&rec(90, 1, 9), &view, &undo, &schema()).unwrap();
        assert_eq!(got, None);
    }

    #[test]
    fn multi_hop_chain_reaches_the_visible_version() {
        let view = ReadView { low_watermark: 50, high_watermark: 60, active_txns: BTreeSet::new() };
        let undo = UndoLog::new();
        let pk = vec![Value::Int64(1)];
        undo.push(1, pk.clone(), UndoEntry { trx_id: 70, prior: Some(rec(7, 1, 1)) });
        undo.push(1, pk.clone(), UndoEntry { trx_id: 80, prior: Some(rec(70, 1, 2)) });
        undo.push(1, pk.clone(), UndoEntry { trx_id: 90, prior: Some(rec(80, 1, 3)) });
        let got = resolve_ambiguous(&rec(90, 1, 4), &view, &undo, &schema()).unwrap();
        assert_eq!(got, Some(rec(7, 1, 1)));
    }

    #[test]
    fn missing_undo_for_invisible_record_is_an_integrity_error() {
        let view = ReadView { low_watermark: 50, high_watermark: 60, active_txns: BTreeSet::new() };
        let undo = UndoLog::new();
        assert!(matches!(
            resolve_ambiguous(&rec(90, 1, 9), &view, &undo, &schema()),
            Err(ResolveError::MissingUndo { trx: 90 })
        ));
    }
}
