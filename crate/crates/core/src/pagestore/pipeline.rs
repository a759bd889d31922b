//! The storage-side record pipeline.
//!
//! Per page, in chain order: records the store cannot prove visible pass
//! through byte-unchanged; visible delete-marked records are dropped;
//! visible records failing the pushed predicate are dropped; survivors are
//! narrowed to the projection; and, when aggregation is pushed, each
//! group's visible survivors except the last fold into a payload attached
//! to that last survivor (the carrier). A page whose records all vanish
//! becomes an empty result page. Scalar (ungrouped) aggregation
//! additionally folds carriers across the pages of one batch request —
//! never across requests, and never for grouped aggregation.

use crate::aggregate::{AggAccum, AggError};
use crate::descriptor::NdpDescriptor;
use crate::page::{Page, FLAG_NDP};
use crate::predicate::{evaluate, EvalError, Ternary};
use crate::record::{Record, RecordStatus, RowView};
use crate::schema::Schema;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Visible,
    Ambiguous,
}

/// The descriptor-side visibility test: strictly below the low watermark is
/// provably visible; anything else the store must not touch.
pub fn check_visibility(record: &Record, descriptor: &NdpDescriptor) -> Visibility {
    if record.trx_id < descriptor.low_watermark_trx_id {
        Visibility::Visible
    } else {
        Visibility::Ambiguous
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineStats {
    pub rows_in: u64,
    pub ambiguous_passed: u64,
    pub deleted_dropped: u64,
    pub filtered_dropped: u64,
    pub folded: u64,
    pub survivors: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("schema digest does not match page contents: {0}")]
    SchemaMismatch(String),
    #[error("page {0} is not a leaf of index {1}")]
    WrongPage(u64, u64),
    #[error("unexpected record status {0:?} in a regular page")]
    UnexpectedStatus(RecordStatus),
    #[error("predicate evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("aggregate folding failed: {0}")]
    Agg(#[from] AggError),
    #[error("cross-page aggregation requires scalar aggregation")]
    GroupedCrossPage,
}

fn project_record(record: &Record, projection: Option<&[usize]>, status: RecordStatus) -> Record {
    let values = match projection {
        None => record.values.clone(),
        Some(p) => p.iter().map(|&i| record.values[i].clone()).collect(),
    };
    Record {
        status,
        delete_mark: false,
        trx_id: record.trx_id,
        values,
        child_page_id: None,
        agg_payload: None,
    }
}

/// Converts one regular leaf page into its pushdown result. Ambiguous
/// records are embedded unchanged; everything else is filtered, projected,
/// and folded per the descriptor.
pub fn ndp_process_page(
    page: &Page,
    descriptor: &NdpDescriptor,
    schema: &Schema,
) -> Result<(Page, PipelineStats), PipelineError> {
    if page.header.index_id != descriptor.index_id || !page.header.is_leaf() {
        return Err(PipelineError::WrongPage(page.header.page_id, descriptor.index_id));
    }
    if !descriptor.digest.matches(schema) {
        return Err(PipelineError::SchemaMismatch(schema.table_name.clone()));
    }

    let projection = descriptor.projection_usize();
    let projection = projection.as_deref();
    let mut stats = PipelineStats::default();

    // Output slots: ambiguous pass-throughs and plain survivors are filled
    // immediately; aggregation survivors reserve a slot that stays empty if
    // they fold into a later carrier.
    let mut out: Vec<Option<Record>> = Vec::with_capacity(page.records.len());
    struct PendingGroup {
        key: Vec<Value>,
        candidate: Record,
        slot: usize,
        fold: AggAccum,
    }
    let mut pending: Option<PendingGroup> = None;

    let finalize =
        |out: &mut Vec<Option<Record>>, group: PendingGroup| {
            let mut carrier = group.candidate;
            carrier.status = RecordStatus::NdpAggregate;
            carrier.agg_payload = Some(group.fold.to_payload());
            out[group.slot] = Some(carrier);
        };

    for record in page.iter() {
        if record.status != RecordStatus::Ordinary {
            return Err(PipelineError::UnexpectedStatus(record.status));
        }
        stats.rows_in += 1;

        if check_visibility(record, descriptor) == Visibility::Ambiguous {
            // The compute node needs the whole record to reconstruct the
            // right version, so it travels untouched.
            stats.ambiguous_passed += 1;
            out.push(Some(record.clone()));
            continue;
        }

        debug_assert!(record.trx_id < descriptor.low_watermark_trx_id);
        if record.delete_mark {
            stats.deleted_dropped += 1;
            continue;
        }
        if let Some(program) = &descriptor.predicate {
            let row = RowView::full(schema, &record.values);
            if evaluate(program, &row)? != Ternary::True {
                // Only provably-visible FALSE/NULL rows may be discarded here.
                stats.filtered_dropped += 1;
                continue;
            }
        }
        stats.survivors += 1;

        match &descriptor.aggregation {
            None => {
                let status = if projection.is_some() {
                    RecordStatus::NdpProjection
                } else {
                    RecordStatus::Ordinary
                };
                out.push(Some(project_record(record, projection, status)));
            }
            Some(agg) => {
                let key: Vec<Value> =
                    agg.group_by.iter().map(|&c| record.values[c as usize].clone()).collect();
                let projected = project_record(
                    record,
                    projection,
                    if projection.is_some() {
                        RecordStatus::NdpProjection
                    } else {
                        RecordStatus::Ordinary
                    },
                );
                match pending.take() {
                    None => {
                        let slot = out.len();
                        out.push(None);
                        pending = Some(PendingGroup {
                            key,
                            candidate: projected,
                            slot,
                            fold: AggAccum::identity(&agg.functions),
                        });
                    }
                    Some(mut group) if group.key == key => {
                        // The previous candidate folds away; this record
                        // becomes the group's new carrier candidate.
                        let row = RowView::for_record(schema, &group.candidate, projection);
                        group.fold.fold_row(&agg.functions, &row)?;
                        stats.folded += 1;
                        let slot = out.len();
                        out.push(None);
                        group.candidate = projected;
                        group.slot = slot;
                        pending = Some(group);
                    }
                    Some(group) => {
                        finalize(&mut out, group);
                        let slot = out.len();
                        out.push(None);
                        pending = Some(PendingGroup {
                            key,
                            candidate: projected,
                            slot,
                            fold: AggAccum::identity(&agg.functions),
                        });
                    }
                }
            }
        }
    }
    if let Some(group) = pending.take() {
        finalize(&mut out, group);
    }

    let records: Vec<Record> = out.into_iter().flatten().collect();
    let mut result = if records.is_empty() {
        page.ndp_empty_like()
    } else {
        let mut header = page.header.clone();
        header.flags |= FLAG_NDP;
        Page { header, records }
    };
    result.header.lsn = page.header.lsn;
    Ok((result, stats))
}

/// Scalar cross-page folding over the processed pages of one batch
/// request, in request page order. Every carrier except the last folds —
/// carrier's own values plus its payload — into a running state the final
/// carrier receives. Pages that lose their carrier may become empty;
/// ambiguous records are untouched.
pub fn cross_page_aggregate(
    pages: &mut [Page],
    descriptor: &NdpDescriptor,
) -> Result<(), PipelineError> {
    let agg = match &descriptor.aggregation {
        Some(agg) if agg.is_scalar() => agg,
        Some(_) => return Err(PipelineError::GroupedCrossPage),
        None => return Ok(()),
    };
    let projection = descriptor.projection_usize();
    let schema = descriptor.digest.to_schema(descriptor.index_id);

    // (page index, record index) of each carrier, in request order.
    let mut carriers: Vec<(usize, usize)> = Vec::new();
    for (pi, page) in pages.iter().enumerate() {
        for (ri, rec) in page.records.iter().enumerate() {
            if rec.status == RecordStatus::NdpAggregate {
                carriers.push((pi, ri));
            }
        }
    }
    if carriers.len() <= 1 {
        return Ok(());
    }

    let mut running = AggAccum::identity(&agg.functions);
    let (last_pi, last_ri) = *carriers.last().unwrap();
    for &(pi, ri) in &carriers[..carriers.len() - 1] {
        let rec = &pages[pi].records[ri];
        let row = RowView::for_record(&schema, rec, projection.as_deref());
        running.fold_row(&agg.functions, &row)?;
        running.merge_payload(rec.agg_payload.as_ref().expect("carrier has payload"))?;
    }
    {
        let rec = &mut pages[last_pi].records[last_ri];
        running.merge_payload(rec.agg_payload.as_ref().expect("carrier has payload"))?;
        rec.agg_payload = Some(running.to_payload());
    }

    // Remove the folded carriers (descending record order within a page so
    // indices stay valid); pages stripped of their last record become empty.
    for &(pi, ri) in carriers[..carriers.len() - 1].iter().rev() {
        pages[pi].records.remove(ri);
    }
    for page in pages.iter_mut() {
        if page.records.is_empty() && !page.header.is_ndp_empty() {
            *page = page.ndp_empty_like();
        }
    }
    Ok(())
}
