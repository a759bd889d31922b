//! The storage-side page service.
//!
//! A node owns the slices assigned to it and serves batch reads over the
//! frame protocol. Every page read starts as a regular versioned lookup;
//! when the request asks for pushdown and admission grants a slot, the
//! page additionally runs the record pipeline and returns its processed
//! form. Admission denial, descriptor problems, or any pipeline error
//! degrade the page (or request) to raw service — the compute node owns
//! completion either way, so degradation is always safe.
//!
//! Request handling fans pages out to a bounded set of workers; results
//! complete in any order. Logical page order is the compute node's
//! problem. Scalar-aggregation requests are the one exception to
//! streaming: carriers can only fold across the pages of one request
//! after all of them have been processed.

pub mod admission;
pub mod cache;
pub mod pipeline;

pub use admission::NdpAdmission;
pub use cache::{CacheOutcome, DescriptorCache};
pub use pipeline::{check_visibility, cross_page_aggregate, ndp_process_page, Visibility};

use crate::btree::PageVersionStore;
use crate::config::PageStoreConfig;
use crate::descriptor::NdpDescriptor;
use crate::page::Page;
use crate::wire::{
    decode_frame, encode_frame, BatchReadRequest, DescriptorMiss, DescriptorMode, EndOfRequest,
    Message, PageResult, PageStatus, RequestStats,
};
use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub struct PageStoreNode {
    pub store_id: u32,
    store: Arc<PageVersionStore>,
    /// page_id -> slice_id for the slices this node hosts. `None` serves
    /// anything present in the store (single-node setups).
    owned_pages: Option<HashMap<u64, u32>>,
    pub cache: DescriptorCache,
    pub admission: NdpAdmission,
    config: PageStoreConfig,
}

enum PageOutcome {
    NotFound,
    Raw(Arc<[u8]>),
    Processed(Page),
}

#[derive(Default)]
struct RequestTally {
    admitted: AtomicU64,
    skipped: AtomicU64,
}

impl PageStoreNode {
    pub fn new(
        store_id: u32,
        store: Arc<PageVersionStore>,
        owned_pages: Option<HashMap<u64, u32>>,
        config: PageStoreConfig,
    ) -> Arc<PageStoreNode> {
        Arc::new(PageStoreNode {
            store_id,
            store,
            owned_pages,
            cache: DescriptorCache::new(config.descriptor_cache_capacity),
            admission: NdpAdmission::new(
                config.ndp_pool_size,
                Duration::from_millis(config.ndp_max_wait_ms),
                config.skip_probability,
                config.skip_seed,
            ),
            config,
        })
    }

    /// Handles one batch read, emitting page results (in completion order
    /// unless cross-page aggregation applies), an optional DESCRIPTOR_MISS,
    /// and the END marker with per-request counters.
    pub fn handle_batch_read(&self, req: &BatchReadRequest, emit: &mut dyn FnMut(Message)) {
        let mut stats = RequestStats { pages_served: req.page_ids.len() as u64, ..Default::default() };

        let descriptor: Option<Arc<NdpDescriptor>> = if req.ndp_requested
            && req.descriptor_mode != DescriptorMode::None
        {
            let inline = match req.descriptor_mode {
                DescriptorMode::Inline => Some(req.descriptor_bytes.as_slice()),
                _ => None,
            };
            match self.cache.get(req.fingerprint, inline) {
                Ok(CacheOutcome::Hit(d)) => {
                    stats.cache_hits = 1;
                    Some(d)
                }
                Ok(CacheOutcome::MissInserted(d)) => {
                    stats.cache_misses = 1;
                    stats.predicate_compilations = 1;
                    Some(d)
                }
                Ok(CacheOutcome::MissNoInline) => {
                    stats.cache_misses = 1;
                    emit(Message::Miss(DescriptorMiss {
                        request_id: req.request_id,
                        fingerprint: req.fingerprint,
                    }));
                    emit(Message::End(EndOfRequest { request_id: req.request_id, stats }));
                    return;
                }
                Err(_) => {
                    // Malformed descriptor or fingerprint mismatch: the
                    // whole request degrades to raw service.
                    stats.cache_misses = 1;
                    None
                }
            }
        } else {
            None
        };

        // Scalar aggregation folds across the request's pages, so results
        // are collected; everything else streams as it completes.
        let cross_page = descriptor
            .as_ref()
            .and_then(|d| d.aggregation.as_ref())
            .map(|a| a.is_scalar())
            .unwrap_or(false);

        let tally = RequestTally::default();
        let next = AtomicUsize::new(0);
        let workers = req.page_ids.len().min(self.config.ndp_pool_size.max(1));
        let (tx, rx) = unbounded::<(usize, PageOutcome)>();

        std::thread::scope(|scope| {
            for _ in 0..workers.max(1) {
                let tx = tx.clone();
                let descriptor = descriptor.clone();
                let tally = &tally;
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= req.page_ids.len() {
                        break;
                    }
                    let outcome = self.serve_page(req, req.page_ids[i], descriptor.as_deref(), tally);
                    if tx.send((i, outcome)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            if cross_page {
                let descriptor = descriptor.as_deref().expect("cross_page implies descriptor");
                let mut slots: Vec<Option<PageOutcome>> =
                    (0..req.page_ids.len()).map(|_| None).collect();
                for (i, outcome) in rx.iter() {
                    slots[i] = Some(outcome);
                }
                self.emit_cross_page(req, descriptor, slots, emit);
            } else {
                for (i, outcome) in rx.iter() {
                    let msg = self.result_for(req, req.page_ids[i], outcome, descriptor.as_deref());
                    emit(msg);
                }
            }
        });

        stats.ndp_admitted = tally.admitted.load(Ordering::Relaxed);
        stats.ndp_skipped = tally.skipped.load(Ordering::Relaxed);
        emit(Message::End(EndOfRequest { request_id: req.request_id, stats }));
    }

    fn serve_page(
        &self,
        req: &BatchReadRequest,
        page_id: u64,
        descriptor: Option<&NdpDescriptor>,
        tally: &RequestTally,
    ) -> PageOutcome {
        if self.config.service_delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.config.service_delay_ms));
        }
        if let Some(owned) = &self.owned_pages {
            if owned.get(&page_id) != Some(&req.slice_id) {
                return PageOutcome::NotFound;
            }
        }
        let raw = match self.store.lookup(page_id, req.lsn) {
            Ok(bytes) => bytes,
            Err(_) => return PageOutcome::NotFound,
        };
        let descriptor = match descriptor {
            Some(d) if req.ndp_requested => d,
            _ => return PageOutcome::Raw(raw),
        };
        let permit = match self.admission.try_acquire() {
            Some(p) => p,
            None => {
                tally.skipped.fetch_add(1, Ordering::Relaxed);
                return PageOutcome::Raw(raw);
            }
        };
        let schema = descriptor.digest.to_schema(descriptor.index_id);
        let processed = crate::page::decode_page(&raw, &schema, None)
            .map_err(|e| e.to_string())
            .and_then(|page| {
                ndp_process_page(&page, descriptor, &schema).map_err(|e| e.to_string())
            });
        drop(permit);
        match processed {
            Ok((page, _)) => {
                tally.admitted.fetch_add(1, Ordering::Relaxed);
                PageOutcome::Processed(page)
            }
            Err(_) => {
                // Any pipeline error degrades this page to raw service.
                tally.skipped.fetch_add(1, Ordering::Relaxed);
                PageOutcome::Raw(raw)
            }
        }
    }

    fn result_for(
        &self,
        req: &BatchReadRequest,
        page_id: u64,
        outcome: PageOutcome,
        descriptor: Option<&NdpDescriptor>,
    ) -> Message {
        let (status, payload) = match outcome {
            PageOutcome::NotFound => (PageStatus::NotFound, Vec::new()),
            PageOutcome::Raw(bytes) => (PageStatus::Raw, bytes.to_vec()),
            PageOutcome::Processed(page) => {
                if page.header.is_ndp_empty() {
                    (PageStatus::NdpEmpty, Vec::new())
                } else {
                    let descriptor = descriptor.expect("processed page implies descriptor");
                    let schema = descriptor.digest.to_schema(descriptor.index_id);
                    let projection = descriptor.projection_usize();
                    match crate::page::encode_page(
                        &page,
                        &schema,
                        projection.as_deref(),
                        crate::page::DEFAULT_PAGE_SIZE,
                    ) {
                        Ok(bytes) => (PageStatus::Ndp, bytes),
                        Err(_) => match self.store.lookup(page_id, req.lsn) {
                            Ok(raw) => (PageStatus::Raw, raw.to_vec()),
                            Err(_) => (PageStatus::NotFound, Vec::new()),
                        },
                    }
                }
            }
        };
        Message::Result(PageResult { request_id: req.request_id, page_id, status, payload })
    }

    fn emit_cross_page(
        &self,
        req: &BatchReadRequest,
        descriptor: &NdpDescriptor,
        slots: Vec<Option<PageOutcome>>,
        emit: &mut dyn FnMut(Message),
    ) {
        let mut outcomes: Vec<PageOutcome> =
            slots.into_iter().map(|s| s.expect("every page produced an outcome")).collect();

        // Fold carriers across the processed pages, in request page order.
        let processed_slots: Vec<usize> = outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| matches!(o, PageOutcome::Processed(_)))
            .map(|(i, _)| i)
            .collect();
        let mut pages: Vec<Page> = processed_slots
            .iter()
            .map(|&i| match &outcomes[i] {
                PageOutcome::Processed(p) => p.clone(),
                _ => unreachable!(),
            })
            .collect();
        if cross_page_aggregate(&mut pages, descriptor).is_ok() {
            for (&slot, page) in processed_slots.iter().zip(pages) {
                outcomes[slot] = PageOutcome::Processed(page);
            }
        }
        for (i, outcome) in outcomes.into_iter().enumerate() {
            emit(self.result_for(req, req.page_ids[i], outcome, Some(descriptor)));
        }
    }

    /// Serves one in-process connection: request frames in, result frames
    /// out, until the peer hangs up.
    pub fn serve_frames(&self, rx: Receiver<Vec<u8>>, tx: Sender<Vec<u8>>) {
        while let Ok(frame) = rx.recv() {
            let msg = match decode_frame(&frame) {
                Ok(m) => m,
                Err(_) => break,
            };
            if let Message::Request(req) = msg {
                let mut emit = |m: Message| {
                    let _ = tx.send(encode_frame(&m));
                };
                self.handle_batch_read(&req, &mut emit);
            }
        }
    }

    /// Opens an in-process connection, spawning the node's handler thread.
    pub fn connect_inproc(self: &Arc<Self>) -> (Sender<Vec<u8>>, Receiver<Vec<u8>>) {
        let (req_tx, req_rx) = bounded::<Vec<u8>>(64);
        let (res_tx, res_rx) = bounded::<Vec<u8>>(1024);
        let node = self.clone();
        std::thread::spawn(move || node.serve_frames(req_rx, res_tx));
        (req_tx, res_rx)
    }

    /// Blocking TCP accept loop; one handler thread per connection.
    pub fn serve_tcp(self: Arc<Self>, listener: std::net::TcpListener) -> std::io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let node = self.clone();
            std::thread::spawn(move || {
                let mut reader = std::io::BufReader::new(match stream.try_clone() {
                    Ok(s) => s,
                    Err(_) => return,
                });
                let mut writer = std::io::BufWriter::new(stream);
                while let Ok(Some(frame)) = crate::wire::read_frame(&mut reader) {
                    let msg = match decode_frame(&frame) {
                        Ok(m) => m,
                        Err(_) => break,
                    };
                    if let Message::Request(req) = msg {
                        let mut failed = false;
                        let mut emit = |m: Message| {
                            if !failed {
                                failed =
                                    crate::wire::write_frame(&mut writer, &encode_frame(&m)).is_err();
                            }
                        };
                        node.handle_batch_read(&req, &mut emit);
                        if failed {
                            break;
                        }
                    }
                }
            });
        }
        Ok(())
    }
}
