//! Storage abstraction layer client.
//!
//! The SAL hides where pages live: it splits a batch read into one
//! sub-batch per slice, sends the sub-batches to their page stores
//! concurrently, and funnels results back to the cursor as they arrive.
//! Bytes are accounted at the frame level; received bytes count only
//! PAGE_RESULT frames, which is the engine's network-read metric.
//!
//! Descriptor delivery is fingerprint-first: each endpoint gets the bytes
//! inline once per scan, later sub-batches carry only the fingerprint, and
//! a DESCRIPTOR_MISS (cache eviction on the store) triggers one inline
//! retry.

pub mod transport;

pub use transport::{Connection, Endpoint};

use crate::descriptor::NdpDescriptor;
use crate::wire::{
    decode_frame, encode_frame, BatchReadRequest, DescriptorMode, Message, RequestStats,
};
use crossbeam_channel::{unbounded, Receiver, Sender};
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SalError {
    #[error("page {0} is not mapped to any slice")]
    UnmappedPage(u64),
    #[error("slice {0} has no endpoint")]
    UnroutedSlice(u32),
}

/// Resolves which slice a page belongs to. Live trees implement this so
/// pages created by splits route correctly; static deployments use a
/// plain map loaded from slice files.
pub trait SliceRouter: Send + Sync {
    fn slice_of_page(&self, page_id: u64) -> Option<u32>;
}

impl SliceRouter for HashMap<u64, u32> {
    fn slice_of_page(&self, page_id: u64) -> Option<u32> {
        self.get(&page_id).copied()
    }
}

/// Where pages live: page -> slice (via the router) and slice -> store.
#[derive(Clone)]
pub struct SliceMap {
    pub router: Arc<dyn SliceRouter>,
    pub slice_to_store: HashMap<u32, u32>,
}

/// One slice's share of a batch read, in parent batch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBatch {
    pub slice_id: u32,
    pub page_ids: Vec<u64>,
}

/// Groups a batch's pages by slice. Sub-batches appear in order of first
/// occurrence and preserve the parent batch's page order; their union is
/// exactly the input.
pub fn split_batch(page_ids: &[u64], router: &dyn SliceRouter) -> Result<Vec<SubBatch>, SalError> {
    let mut order: Vec<u32> = Vec::new();
    let mut groups: HashMap<u32, Vec<u64>> = HashMap::new();
    for &page_id in page_ids {
        let slice = router.slice_of_page(page_id).ok_or(SalError::UnmappedPage(page_id))?;
        let entry = groups.entry(slice).or_default();
        if entry.is_empty() {
            order.push(slice);
        }
        entry.push(page_id);
    }
    Ok(order
        .into_iter()
        .map(|slice_id| SubBatch { slice_id, page_ids: groups.remove(&slice_id).unwrap() })
        .collect())
}

/// What a dispatched batch sends back to the cursor.
#[derive(Debug)]
pub enum SalEvent {
    /// A page result plus the size of its wire frame.
    Page(crate::wire::PageResult, u64),
    /// Bytes of one request frame that went out.
    Sent(u64),
    /// Per-request counters from one store.
    Stats(u32, RequestStats),
    /// An endpoint failed; the listed pages never got results and the
    /// caller must fall back to direct version-store reads.
    Transport { slice_id: u32, page_ids: Vec<u64>, error: String },
    /// All sub-batches finished.
    Done,
}

#[derive(Debug, Default)]
pub struct SalMetrics {
    pub bytes_sent: AtomicU64,
    pub bytes_received: AtomicU64,
}

pub struct BatchSpec {
    pub lsn: u64,
    pub page_ids: Vec<u64>,
    pub ndp_requested: bool,
    pub descriptor: Option<Arc<NdpDescriptor>>,
}

pub struct SalClient {
    endpoints: HashMap<u32, Endpoint>,
    pub slice_map: SliceMap,
    next_request_id: AtomicU64,
    /// (store, fingerprint) pairs already delivered inline this session.
    delivered: Mutex<HashSet<(u32, u64)>>,
    pub metrics: SalMetrics,
}

impl SalClient {
    pub fn new(endpoints: HashMap<u32, Endpoint>, slice_map: SliceMap) -> SalClient {
        SalClient {
            endpoints,
            slice_map,
            next_request_id: AtomicU64::new(1),
            delivered: Mutex::new(HashSet::new()),
            metrics: SalMetrics::default(),
        }
    }

    pub fn store_of_slice(&self, slice_id: u32) -> Result<u32, SalError> {
        self.slice_map.slice_to_store.get(&slice_id).copied().ok_or(SalError::UnroutedSlice(slice_id))
    }

    /// Splits, dispatches, and merges one batch read. Sub-batches go out on
    /// one thread per endpoint touched; the returned receiver yields pages
    /// in arrival order, per-store stats, transport errors, and a final
    /// `Done`.
    pub fn dispatch(self: &Arc<Self>, spec: BatchSpec) -> Result<Receiver<SalEvent>, SalError> {
        let sub_batches = split_batch(&spec.page_ids, self.slice_map.router.as_ref())?;
        for sb in &sub_batches {
            self.store_of_slice(sb.slice_id)?;
        }
        let (tx, rx) = unbounded::<SalEvent>();
        let pending = Arc::new(AtomicU64::new(sub_batches.len() as u64));
        if sub_batches.is_empty() {
            let _ = tx.send(SalEvent::Done);
            return Ok(rx);
        }
        let spec = Arc::new(spec);
        for sb in sub_batches {
            let client = self.clone();
            let tx = tx.clone();
            let pending = pending.clone();
            let spec = spec.clone();
            std::thread::spawn(move || {
                client.run_sub_batch(&spec, &sb, &tx);
                if pending.fetch_sub(1, Ordering::AcqRel) == 1 {
                    let _ = tx.send(SalEvent::Done);
                }
            });
        }
        Ok(rx)
    }

    fn run_sub_batch(&self, spec: &BatchSpec, sb: &SubBatch, tx: &Sender<SalEvent>) {
        let store_id = match self.store_of_slice(sb.slice_id) {
            Ok(s) => s,
            Err(e) => {
                let _ = tx.send(SalEvent::Transport {
                    slice_id: sb.slice_id,
                    page_ids: sb.page_ids.clone(),
                    error: e.to_string(),
                });
                return;
            }
        };
        match self.try_sub_batch(spec, sb, store_id, tx) {
            Ok(()) => {}
            Err(error) => {
                let _ = tx.send(SalEvent::Transport {
                    slice_id: sb.slice_id,
                    page_ids: sb.page_ids.clone(),
                    error,
                });
            }
        }
    }

    /// Runs one sub-batch, retrying once with the descriptor inline when
    /// the store reports a descriptor cache miss.
    fn try_sub_batch(
        &self,
        spec: &BatchSpec,
        sb: &SubBatch,
        store_id: u32,
        tx: &Sender<SalEvent>,
    ) -> Result<(), String> {
        let endpoint =
            self.endpoints.get(&store_id).ok_or_else(|| format!("no endpoint for store {store_id}"))?;

        let mut attempt = 0u8;
        loop {
            attempt += 1;
            // Fingerprint-only requests are safe once an inline delivery to
            // this store has completed; concurrent sub-batches of the first
            // wave all carry the bytes, so none can race the store's cache.
            let mut delivered_key = None;
            let (mode, descriptor_bytes, fingerprint) = match (&spec.descriptor, spec.ndp_requested) {
                (Some(d), true) => {
                    let key = (store_id, d.fingerprint);
                    let already = self.delivered.lock().unwrap().contains(&key);
                    if attempt > 1 || !already {
                        delivered_key = Some(key);
                        (DescriptorMode::Inline, d.encode(), d.fingerprint)
                    } else {
                        (DescriptorMode::Fingerprint, Vec::new(), d.fingerprint)
                    }
                }
                _ => (DescriptorMode::None, Vec::new(), 0),
            };
            let request = BatchReadRequest {
                request_id: self.next_request_id.fetch_add(1, Ordering::Relaxed),
                slice_id: sb.slice_id,
                lsn: spec.lsn,
                ndp_requested: spec.ndp_requested,
                descriptor_mode: mode,
                fingerprint,
                descriptor_bytes,
                page_ids: sb.page_ids.clone(),
            };

            let mut conn = endpoint.connect().map_err(|e| e.to_string())?;
            let frame = encode_frame(&Message::Request(request));
            self.metrics.bytes_sent.fetch_add(frame.len() as u64, Ordering::Relaxed);
            conn.send_frame(&frame).map_err(|e| e.to_string())?;
            let _ = tx.send(SalEvent::Sent(frame.len() as u64));

            let mut missed = false;
            loop {
                let frame = conn
                    .recv_frame()
                    .map_err(|e| e.to_string())?
                    .ok_or_else(|| "connection closed mid-request".to_string())?;
                let msg = decode_frame(&frame).map_err(|e| e.to_string())?;
                match msg {
                    Message::Result(result) => {
                        self.metrics.bytes_received.fetch_add(frame.len() as u64, Ordering::Relaxed);
                        let _ = tx.send(SalEvent::Page(result, frame.len() as u64));
                    }
                    Message::Miss(_) => missed = true,
                    Message::End(end) => {
                        let _ = tx.send(SalEvent::Stats(store_id, end.stats));
                        break;
                    }
                    Message::Request(_) => return Err("unexpected request frame".into()),
                }
            }
            if !missed {
                if let Some(key) = delivered_key {
                    self.delivered.lock().unwrap().insert(key);
                }
                return Ok(());
            }
            if attempt >= 2 {
                return Err("descriptor miss persisted after inline retry".into());
            }
        }
    }
}
