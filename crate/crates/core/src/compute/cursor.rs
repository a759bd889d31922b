//! The pushdown-aware index scan cursor.
//!
//! A scan proceeds in batches: latch the tree, capture the LSN, take up
//! to `look_ahead` leaf ids in range, release. Leaves already resident in
//! the buffer pool are copied into private NDP frames and finished
//! locally; the rest go to the page stores through the SAL. Results
//! arrive in any order and are consumed strictly in logical leaf order
//! through a reorder buffer, so emitted rows ascend by primary key no
//! matter how slices interleave.
//!
//! Every page the stores decline to process (or that arrives raw for any
//! other reason) runs the full local pipeline: visibility under the full
//! read view, undo resolution for invisible records, the pushed predicate,
//! residual predicates, projection, and aggregation. The same local
//! pipeline finishes ambiguous records embedded in processed pages.
//! `rows_evaluated_locally` counts exactly the rows that took this local
//! path.

use super::agg::{AggPlan, AggPlanError};
use super::buffer_pool::BufferPool;
use super::resolve::{resolve_ambiguous, ResolveError};
use crate::aggregate::{AggAccum, AggError};
use crate::btree::{BTree, BTreeError, ScanRange};
use crate::config::ComputeConfig;
use crate::descriptor::NdpDescriptor;
use crate::metrics::QueryMetrics;
use crate::mvcc::ReadView;
use crate::page::PageError;
use crate::predicate::{evaluate, interpret, EvalError, PredExpr, Ternary};
use crate::record::{Record, RecordError, RecordStatus, RowView};
use crate::sal::{BatchSpec, SalClient, SalError, SalEvent};
use crate::value::{compare_keys, Value};
use crate::wire::PageStatus;
use crossbeam_channel::Receiver;
use std::cmp::Ordering as CmpOrdering;
use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error(transparent)]
    Tree(#[from] BTreeError),
    #[error(transparent)]
    Version(#[from] crate::btree::VersionStoreError),
    #[error(transparent)]
    Sal(#[from] SalError),
    #[error(transparent)]
    Page(#[from] PageError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Agg(#[from] AggError),
    #[error(transparent)]
    AggPlan(#[from] AggPlanError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("rows arrived out of key order")]
    Unordered,
}

/// Everything a cursor needs from its environment.
#[derive(Clone)]
pub struct EngineHandles {
    pub tree: Arc<BTree>,
    pub sal: Arc<SalClient>,
    pub pool: Arc<BufferPool>,
    pub compute: ComputeConfig,
}

/// One table access, fully planned.
#[derive(Clone)]
pub struct ScanSpec {
    pub range: ScanRange,
    pub read_view: ReadView,
    pub descriptor: Arc<NdpDescriptor>,
    /// Whether batch reads ask the stores for pushdown at all.
    pub ndp_requested: bool,
    /// Conjuncts the executor evaluates locally on every row.
    pub residual: Vec<PredExpr>,
    /// Output columns (schema indices) for non-aggregating scans.
    pub output_columns: Vec<usize>,
    pub agg: Option<AggPlan>,
}

/// What a finished scan hands back.
#[derive(Debug)]
pub enum ScanOutput {
    Rows(Vec<Vec<Value>>),
    /// Unfinalized groups in key order, for parallel-query merging.
    Partials(Vec<(Vec<Value>, AggAccum)>),
}

enum Arrival {
    Wire(PageStatus, Vec<u8>),
    /// Raw page copied out of the buffer pool into an NDP frame.
    LocalCopy(Arc<[u8]>),
    /// Raw page served from the pool (non-pushdown scan).
    PoolHit(Arc<[u8]>),
    /// Transport failure: fall back to a direct version-store read.
    Fallback,
}

struct BatchState {
    lsn: u64,
    expected: Vec<u64>,
    next: usize,
    arrivals: HashMap<u64, Arrival>,
    stream: Option<Receiver<SalEvent>>,
    stream_done: bool,
    /// NDP frames still reserved for this batch.
    frames_reserved: usize,
}

pub struct NdpScanCursor {
    handles: EngineHandles,
    spec: ScanSpec,
    look_ahead: usize,
    position: Option<Vec<Value>>,
    exhausted: bool,
    batch: Option<BatchState>,
    pending: VecDeque<Vec<Value>>,
    current_group: Option<(Vec<Value>, AggAccum)>,
    partials: Vec<(Vec<Value>, AggAccum)>,
    collect_partials: bool,
    last_key: Option<Vec<Value>>,
    metrics: QueryMetrics,
    frames_high_water: u64,
    started: Instant,
    finished: bool,
}

/// Finishes a group into the right sink: a finalized output row, or an
/// unfinalized partial for the parallel-query leader.
fn sink_group(
    pending: &mut VecDeque<Vec<Value>>,
    partials: &mut Vec<(Vec<Value>, AggAccum)>,
    collect_partials: bool,
    agg: &AggPlan,
    key: Vec<Value>,
    accum: AggAccum,
) -> Result<(), ScanError> {
    if collect_partials {
        partials.push((key, accum));
    } else {
        pending.push_back(agg.finalize(&key, &accum)?);
    }
    Ok(())
}

/// Routes a key to the live group, closing the previous group on change,
/// and returns the group's accumulator.
fn route_group<'a>(
    current: &'a mut Option<(Vec<Value>, AggAccum)>,
    pending: &mut VecDeque<Vec<Value>>,
    partials: &mut Vec<(Vec<Value>, AggAccum)>,
    collect_partials: bool,
    agg: &AggPlan,
    key: Vec<Value>,
) -> Result<&'a mut AggAccum, ScanError> {
    let same = current.as_ref().map(|(k, _)| *k == key).unwrap_or(false);
    if !same {
        if let Some((done_key, accum)) = current.take() {
            sink_group(pending, partials, collect_partials, agg, done_key, accum)?;
        }
        *current = Some((key, agg.identity()));
    }
    Ok(&mut current.as_mut().unwrap().1)
}

impl NdpScanCursor {
    pub fn new(handles: EngineHandles, spec: ScanSpec) -> NdpScanCursor {
        let look_ahead = handles.compute.ndp_max_pages_look_ahead.max(1);
        let scalar_group = spec.agg.as_ref().filter(|a| a.is_scalar()).map(|a| (Vec::new(), a.identity()));
        NdpScanCursor {
            handles,
            spec,
            look_ahead,
            position: None,
            exhausted: false,
            batch: None,
            pending: VecDeque::new(),
            // Scalar aggregation emits exactly one row even over nothing,
            // so the group exists from the start.
            current_group: scalar_group,
            partials: Vec::new(),
            collect_partials: false,
            last_key: None,
            metrics: QueryMetrics::default(),
            frames_high_water: 0,
            started: Instant::now(),
            finished: false,
        }
    }

    /// Runs the scan to completion. With `partials` set, aggregating scans
    /// return unfinalized groups for a parallel-query leader to merge.
    pub fn run_to_end(mut self, partials: bool) -> Result<(ScanOutput, QueryMetrics), ScanError> {
        self.collect_partials = partials && self.spec.agg.is_some();
        let mut rows = Vec::new();
        while let Some(row) = self.next_row()? {
            rows.push(row);
        }
        let metrics = self.take_metrics();
        if self.collect_partials {
            Ok((ScanOutput::Partials(std::mem::take(&mut self.partials)), metrics))
        } else {
            Ok((ScanOutput::Rows(rows), metrics))
        }
    }

    /// The next output row in key (or group) order, or `None` at the end.
    pub fn next_row(&mut self) -> Result<Option<Vec<Value>>, ScanError> {
        loop {
            if let Some(row) = self.pending.pop_front() {
                self.metrics.rows_emitted += 1;
                return Ok(Some(row));
            }
            if self.finished {
                return Ok(None);
            }
            self.advance()?;
        }
    }

    pub fn take_metrics(&mut self) -> QueryMetrics {
        self.metrics.wall_time_micros = self.started.elapsed().as_micros() as u64;
        self.metrics.ndp_frames_high_water = self.frames_high_water;
        self.metrics.clone()
    }

    /// Makes progress: assembles a batch, consumes the next page in
    /// logical order, or finishes the scan.
    fn advance(&mut self) -> Result<(), ScanError> {
        if self.batch.is_none() {
            if self.exhausted {
                return self.finish_scan();
            }
            return self.assemble_batch();
        }

        let (consumed, page_id) = {
            let b = self.batch.as_ref().unwrap();
            if b.next >= b.expected.len() {
                (true, 0)
            } else {
                (false, b.expected[b.next])
            }
        };
        if consumed {
            return self.close_batch();
        }
        if !self.batch.as_ref().unwrap().arrivals.contains_key(&page_id) {
            self.wait_for(page_id)?;
        }
        let (arrival, lsn, release) = {
            let b = self.batch.as_mut().unwrap();
            b.next += 1;
            let release = b.frames_reserved > 0;
            if release {
                b.frames_reserved -= 1;
            }
            (b.arrivals.remove(&page_id).expect("arrival present"), b.lsn, release)
        };
        if release {
            // A finished page goes straight back to the free pool.
            self.handles.pool.release_ndp(1);
        }
        self.process_page(page_id, lsn, arrival)
    }

    /// Latch, capture the LSN, reserve frames, split by residency, dispatch.
    fn assemble_batch(&mut self) -> Result<(), ScanError> {
        debug_assert!(self.batch.is_none());
        let want = self.look_ahead;
        // A pushdown batch owns one NDP frame per page until the page is
        // consumed; a tight pool shrinks the batch instead of blocking.
        let (mut granted, ndp_on_wire) = if self.spec.ndp_requested {
            let granted = self.handles.pool.reserve_ndp(want);
            (granted, granted > 0)
        } else {
            (0, false)
        };
        // With no frames at all the batch degrades to a small raw read and
        // the local pipeline finishes the pages.
        let limit = if ndp_on_wire { granted } else { want.min(8) };

        let capture =
            self.handles.tree.capture_batch(&self.spec.range, self.position.as_deref(), limit)?;
        self.frames_high_water = self.frames_high_water.max(granted as u64);

        let taken = capture.leaf_ids.len();
        if granted > taken {
            self.handles.pool.release_ndp(granted - taken);
            granted = taken;
        }

        match capture.next_position {
            Some(p) => self.position = Some(p),
            None => self.exhausted = true,
        }
        if capture.leaf_ids.is_empty() {
            self.exhausted = true;
            if granted > 0 {
                self.handles.pool.release_ndp(granted);
            }
            return Ok(());
        }

        // Resident pages are copied into the NDP area and finished locally;
        // only the rest go on the wire.
        let mut arrivals: HashMap<u64, Arrival> = HashMap::new();
        let mut wire_ids: Vec<u64> = Vec::new();
        for &page_id in &capture.leaf_ids {
            match self.handles.pool.lookup(page_id) {
                Some(bytes) if ndp_on_wire => {
                    arrivals.insert(page_id, Arrival::LocalCopy(bytes));
                }
                Some(bytes) => {
                    arrivals.insert(page_id, Arrival::PoolHit(bytes));
                }
                None => wire_ids.push(page_id),
            }
        }

        let stream = if wire_ids.is_empty() {
            None
        } else {
            Some(self.handles.sal.dispatch(BatchSpec {
                lsn: capture.lsn,
                page_ids: wire_ids,
                ndp_requested: ndp_on_wire,
                descriptor: Some(self.spec.descriptor.clone()),
            })?)
        };

        self.batch = Some(BatchState {
            lsn: capture.lsn,
            expected: capture.leaf_ids,
            next: 0,
            arrivals,
            stream,
            stream_done: false,
            frames_reserved: granted,
        });
        Ok(())
    }

    /// Blocks on the result stream until `page_id` has arrived.
    fn wait_for(&mut self, page_id: u64) -> Result<(), ScanError> {
        loop {
            {
                let b = self.batch.as_ref().unwrap();
                if b.arrivals.contains_key(&page_id) {
                    return Ok(());
                }
                if b.stream_done {
                    return Err(ScanError::Protocol(format!(
                        "stream finished without a result for page {page_id}"
                    )));
                }
            }
            let stream = self
                .batch
                .as_ref()
                .unwrap()
                .stream
                .clone()
                .ok_or_else(|| ScanError::Protocol(format!("no stream, page {page_id} missing")))?;
            let event = stream
                .recv()
                .map_err(|_| ScanError::Protocol("result stream disconnected".into()))?;
            self.absorb_event(event)?;
        }
    }

    fn absorb_event(&mut self, event: SalEvent) -> Result<(), ScanError> {
        match event {
            SalEvent::Page(result, frame_len) => {
                self.metrics.bytes_on_wire += frame_len;
                let batch = self.batch.as_mut().unwrap();
                if !batch.expected.contains(&result.page_id) {
                    return Err(ScanError::Protocol(format!(
                        "result for page {} not in this batch",
                        result.page_id
                    )));
                }
                let prior = batch
                    .arrivals
                    .insert(result.page_id, Arrival::Wire(result.status, result.payload));
                if prior.is_some() {
                    return Err(ScanError::Protocol(format!(
                        "duplicate result for page {}",
                        result.page_id
                    )));
                }
            }
            SalEvent::Sent(bytes) => self.metrics.bytes_sent += bytes,
            SalEvent::Stats(store_id, stats) => {
                self.metrics.per_store.entry(store_id).or_default().absorb(&stats);
            }
            SalEvent::Transport { page_ids, .. } => {
                let batch = self.batch.as_mut().unwrap();
                for page_id in page_ids {
                    batch.arrivals.entry(page_id).or_insert(Arrival::Fallback);
                }
            }
            SalEvent::Done => self.batch.as_mut().unwrap().stream_done = true,
        }
        Ok(())
    }

    /// Drains the stream after the last page so store stats are accounted,
    /// releases leftover frames, and closes the batch.
    fn close_batch(&mut self) -> Result<(), ScanError> {
        let stream = self.batch.as_mut().unwrap().stream.take();
        if let Some(stream) = stream {
            while !self.batch.as_ref().unwrap().stream_done {
                match stream.recv() {
                    Ok(event) => self.absorb_event(event)?,
                    Err(_) => break,
                }
            }
        }
        let batch = self.batch.as_mut().unwrap();
        if batch.frames_reserved > 0 {
            self.handles.pool.release_ndp(batch.frames_reserved);
            batch.frames_reserved = 0;
        }
        self.batch = None;
        Ok(())
    }

    fn finish_scan(&mut self) -> Result<(), ScanError> {
        if let Some((key, accum)) = self.current_group.take() {
            let agg = self.spec.agg.as_ref().expect("group implies aggregation");
            sink_group(
                &mut self.pending,
                &mut self.partials,
                self.collect_partials,
                agg,
                key,
                accum,
            )?;
        }
        self.finished = true;
        Ok(())
    }

    fn process_page(&mut self, page_id: u64, lsn: u64, arrival: Arrival) -> Result<(), ScanError> {
        match arrival {
            Arrival::Wire(PageStatus::NotFound, _) => {
                Err(ScanError::Protocol(format!("page {page_id} reported NOT_FOUND")))
            }
            Arrival::Wire(PageStatus::NdpEmpty, _) => {
                self.metrics.pages.ndp_empty += 1;
                Ok(())
            }
            Arrival::Wire(PageStatus::Raw, payload) => {
                self.metrics.pages.raw += 1;
                let bytes: Arc<[u8]> = payload.into();
                // Raw pages a scan fetched land in the shared buffer pool.
                self.handles.pool.insert_regular(page_id, bytes.clone());
                self.local_pipeline_page(&bytes)
            }
            Arrival::Wire(PageStatus::Ndp, payload) => {
                self.metrics.pages.ndp += 1;
                self.consume_ndp_page(&payload)
            }
            Arrival::LocalCopy(bytes) => {
                self.metrics.pages.copied_from_cache += 1;
                self.local_pipeline_page(&bytes)
            }
            Arrival::PoolHit(bytes) => {
                self.metrics.pages.raw += 1;
                self.local_pipeline_page(&bytes)
            }
            Arrival::Fallback => {
                self.metrics.pages.raw += 1;
                let bytes = self.handles.tree.store().lookup(page_id, lsn)?;
                self.handles.pool.insert_regular(page_id, bytes.clone());
                self.local_pipeline_page(&bytes)
            }
        }
    }

    /// The full local pipeline over a regular page.
    fn local_pipeline_page(&mut self, bytes: &[u8]) -> Result<(), ScanError> {
        let schema = self.handles.tree.schema.clone();
        let page = crate::page::decode_page(bytes, &schema, None)?;
        for record in page.iter() {
            self.local_pipeline_row(record, &schema)?;
        }
        Ok(())
    }

    /// Visibility, undo resolution, pushed predicate, then the shared exit.
    fn local_pipeline_row(
        &mut self,
        record: &Record,
        schema: &crate::schema::Schema,
    ) -> Result<(), ScanError> {
        self.metrics.rows_evaluated_locally += 1;
        let resolved: Record;
        let row = if self.spec.read_view.is_visible(record.trx_id) {
            record
        } else {
            match resolve_ambiguous(record, &self.spec.read_view, self.handles.tree.undo(), schema)?
            {
                Some(r) => {
                    resolved = r;
                    &resolved
                }
                None => return Ok(()),
            }
        };
        if row.delete_mark {
            return Ok(());
        }
        let view = RowView::full(schema, &row.values);
        if let Some(program) = &self.spec.descriptor.predicate {
            if evaluate(program, &view)? != Ternary::True {
                return Ok(());
            }
        }
        self.emit_visible(&view)
    }

    /// Residual predicates, the range guard, then output or accumulation.
    fn emit_visible(&mut self, view: &RowView) -> Result<(), ScanError> {
        for conjunct in &self.spec.residual {
            if interpret(conjunct, view)? != Ternary::True {
                return Ok(());
            }
        }
        let pk_len = self.handles.tree.schema.pk_prefix_len;
        let key: Vec<Value> = (0..pk_len)
            .map(|i| view.get(i).cloned().ok_or(EvalError::ColumnAbsent(i)))
            .collect::<Result<_, _>>()?;
        // Edge leaves of a range batch hold out-of-range rows.
        if !self.spec.range.contains(&key) {
            return Ok(());
        }
        match &self.spec.agg {
            None => {
                if let Some(last) = &self.last_key {
                    if compare_keys(last, &key) != CmpOrdering::Less {
                        return Err(ScanError::Unordered);
                    }
                }
                self.last_key = Some(key);
                let mut row = Vec::with_capacity(self.spec.output_columns.len());
                for &c in &self.spec.output_columns {
                    row.push(view.get(c).cloned().ok_or(EvalError::ColumnAbsent(c))?);
                }
                self.pending.push_back(row);
                Ok(())
            }
            Some(agg) => {
                let group_key: Vec<Value> = agg
                    .group_by
                    .iter()
                    .map(|&c| view.get(c).cloned().ok_or(EvalError::ColumnAbsent(c)))
                    .collect::<Result<_, _>>()?;
                let accum = route_group(
                    &mut self.current_group,
                    &mut self.pending,
                    &mut self.partials,
                    self.collect_partials,
                    agg,
                    group_key,
                )?;
                accum.fold_row(&agg.functions, view)?;
                Ok(())
            }
        }
    }

    /// Consumes one processed page from a store.
    fn consume_ndp_page(&mut self, payload: &[u8]) -> Result<(), ScanError> {
        let schema = self.handles.tree.schema.clone();
        let projection = self.spec.descriptor.projection_usize();
        let page = crate::page::decode_page(payload, &schema, projection.as_deref())?;
        for record in page.iter() {
            match record.status {
                // Ambiguous pass-throughs (and unprojected survivors, which
                // are indistinguishable): the full local pipeline decides.
                RecordStatus::Ordinary => self.local_pipeline_row(record, &schema)?,
                RecordStatus::NdpProjection => {
                    let view = RowView::for_record(&schema, record, projection.as_deref());
                    self.emit_visible(&view)?;
                }
                RecordStatus::NdpAggregate => {
                    let agg = self.spec.agg.as_ref().ok_or_else(|| {
                        ScanError::Protocol("aggregate carrier on a non-aggregating scan".into())
                    })?;
                    let view = RowView::for_record(&schema, record, projection.as_deref());
                    let group_key: Vec<Value> = agg
                        .group_by
                        .iter()
                        .map(|&c| view.get(c).cloned().ok_or(EvalError::ColumnAbsent(c)))
                        .collect::<Result<_, _>>()?;
                    let payload =
                        record.agg_payload.as_ref().expect("carrier carries payload");
                    let accum = route_group(
                        &mut self.current_group,
                        &mut self.pending,
                        &mut self.partials,
                        self.collect_partials,
                        agg,
                        group_key,
                    )?;
                    // The carrier's own row first, then its folded peers.
                    accum.fold_row(&agg.functions, &view)?;
                    accum.merge_payload(payload)?;
                }
                other => {
                    return Err(ScanError::Protocol(format!(
                        "unexpected record status {other:?} in a processed page"
                    )));
                }
            }
        }
        Ok(())
    }
}
