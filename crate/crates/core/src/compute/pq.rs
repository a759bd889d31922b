//! Parallel query execution.
//!
//! The scan range splits into contiguous partitions along level-1
//! separator keys; each worker drives an independent pushdown scan over
//! its partition, and a leader merges: rows concatenate in partition
//! order (preserving global key order), scalar partials fold into one
//! accumulator, and grouped partials merge adjacent equal keys — a group
//! straddling a partition boundary arrives as the tail of one worker's
//! list and the head of the next.

use super::agg::AggPlan;
use super::cursor::{EngineHandles, NdpScanCursor, ScanError, ScanOutput, ScanSpec};
use crate::aggregate::AggAccum;
use crate::btree::ScanRange;
use crate::metrics::QueryMetrics;
use crate::value::Value;
use std::ops::Bound;

/// Splits the range into up to `dop` contiguous partitions along leaf
/// boundaries (fewer when the range spans fewer leaves).
fn partition_ranges(handles: &EngineHandles, range: &ScanRange, dop: usize) -> Vec<ScanRange> {
    let leaves: Vec<(u64, crate::btree::PageMeta)> = handles
        .tree
        .directory_snapshot()
        .into_iter()
        .filter(|(_, m)| m.level == 0)
        .filter(|(_, m)| range.intersects(m.low.as_deref(), m.high.as_deref()))
        .collect();
    if leaves.len() <= 1 || dop <= 1 {
        return vec![range.clone()];
    }
    let parts = dop.min(leaves.len());
    let per = leaves.len().div_ceil(parts);
    let mut boundaries: Vec<Vec<Value>> = Vec::new();
    for chunk_start in (per..leaves.len()).step_by(per) {
        match &leaves[chunk_start].1.low {
            Some(low) => boundaries.push(low.clone()),
            None => continue,
        }
    }
    let mut ranges = Vec::with_capacity(boundaries.len() + 1);
    let mut low = range.low.clone();
    for b in boundaries {
        ranges.push(ScanRange { low: low.clone(), high: Bound::Excluded(b.clone()) });
        low = Bound::Included(b);
    }
    ranges.push(ScanRange { low, high: range.high.clone() });
    ranges
}

/// Runs the scan with `dop` workers and merges their results.
pub fn pq_execute(
    handles: &EngineHandles,
    spec: &ScanSpec,
    dop: usize,
) -> Result<(Vec<Vec<Value>>, QueryMetrics), ScanError> {
    let dop = dop.max(1);
    if dop == 1 {
        let cursor = NdpScanCursor::new(handles.clone(), spec.clone());
        let (output, metrics) = cursor.run_to_end(false)?;
        match output {
            ScanOutput::Rows(rows) => return Ok((rows, metrics)),
            ScanOutput::Partials(_) => unreachable!("non-partial run"),
        }
    }

    let ranges = partition_ranges(handles, &spec.range, dop);
    let wants_partials = spec.agg.is_some();

    let mut results: Vec<Option<Result<(ScanOutput, QueryMetrics), ScanError>>> =
        (0..ranges.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut join = Vec::new();
        for range in &ranges {
            let mut worker_spec = spec.clone();
            worker_spec.range = range.clone();
            let handles = handles.clone();
            join.push(scope.spawn(move || {
                NdpScanCursor::new(handles, worker_spec).run_to_end(wants_partials)
            }));
        }
        for (slot, handle) in results.iter_mut().zip(join) {
            *slot = Some(handle.join().expect("worker panicked"));
        }
    });

    let mut metrics = QueryMetrics::default();
    let mut rows: Vec<Vec<Value>> = Vec::new();
    let mut partials: Vec<(Vec<Value>, AggAccum)> = Vec::new();
    for slot in results {
        let (output, worker_metrics) = slot.expect("worker ran")?;
        metrics.absorb(&worker_metrics);
        match output {
            ScanOutput::Rows(mut r) => rows.append(&mut r),
            ScanOutput::Partials(mut p) => partials.append(&mut p),
        }
    }

    if let Some(agg) = &spec.agg {
        rows = merge_partials(agg, partials)?;
    }
    metrics.rows_emitted = rows.len() as u64;
    Ok((rows, metrics))
}

/// Folds adjacent equal-key partials (boundary groups split across
/// partitions) and finalizes in order.
fn merge_partials(
    agg: &AggPlan,
    partials: Vec<(Vec<Value>, AggAccum)>,
) -> Result<Vec<Vec<Value>>, ScanError> {
    let mut rows = Vec::new();
    let mut iter = partials.into_iter();
    let mut current = match iter.next() {
        Some(first) => first,
        None => return Ok(rows),
    };
    for (key, accum) in iter {
        if key == current.0 {
            current.1.merge_payload(&accum.to_payload())?;
        } else {
            rows.push(agg.finalize(&current.0, &current.1)?);
            current = (key, accum);
        }
    }
    rows.push(agg.finalize(&current.0, &current.1)?);
    Ok(rows)
}
