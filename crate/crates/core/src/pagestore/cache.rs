//! The descriptor cache.
//!
//! A table scan sends waves of batch reads sharing one descriptor.
//! Decoding it (and validating its predicate program) on every request
//! burned measurable CPU, so the first request pays and later requests
//! send only the fingerprint. An LRU bound keeps multi-tenant memory in
//! check. A fingerprint-only request that misses gets a DESCRIPTOR_MISS
//! signal and the client retries with the bytes inline.

use crate::descriptor::{DescriptorError, NdpDescriptor};
use crate::util::fnv1a64;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug)]
pub struct DescriptorCache {
    inner: Mutex<Inner>,
    pub hits: AtomicU64,
    pub misses: AtomicU64,
    /// Descriptor decodes performed (the expensive setup work).
    pub compilations: AtomicU64,
}

#[derive(Debug)]
struct Inner {
    capacity: usize,
    tick: u64,
    entries: HashMap<u64, (Arc<NdpDescriptor>, u64)>,
}

#[derive(Debug)]
pub enum CacheOutcome {
    Hit(Arc<NdpDescriptor>),
    /// Missed; decoded from inline bytes and inserted.
    MissInserted(Arc<NdpDescriptor>),
    /// Missed and no inline bytes were provided: signal DESCRIPTOR_MISS.
    MissNoInline,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("descriptor bytes hash to {actual:016x}, request claims {claimed:016x}")]
    FingerprintMismatch { claimed: u64, actual: u64 },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

impl DescriptorCache {
    pub fn new(capacity: usize) -> DescriptorCache {
        DescriptorCache {
            inner: Mutex::new(Inner {
                capacity: capacity.max(1),
                tick: 0,
                entries: HashMap::new(),
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            compilations: AtomicU64::new(0),
        }
    }

    /// Looks up by fingerprint, decoding and inserting from `inline` on a
    /// miss. Inline bytes must hash to the claimed fingerprint.
    pub fn get(&self, fingerprint: u64, inline: Option<&[u8]>) -> Result<CacheOutcome, CacheError> {
        {
            let mut inner = self.inner.lock().unwrap();
            inner.tick += 1;
            let tick = inner.tick;
            if let Some((descriptor, used)) = inner.entries.get_mut(&fingerprint) {
                *used = tick;
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(CacheOutcome::Hit(descriptor.clone()));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let bytes = match inline {
            Some(b) => b,
            None => return Ok(CacheOutcome::MissNoInline),
        };
        let actual = fnv1a64(bytes);
        if actual != fingerprint {
            return Err(CacheError::FingerprintMismatch { claimed: fingerprint, actual });
        }
        let decoded = Arc::new(NdpDescriptor::decode(bytes)?);
        self.compilations.fetch_add(1, Ordering::Relaxed);
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        if inner.entries.len() >= inner.capacity && !inner.entries.contains_key(&fingerprint) {
            if let Some(evict) = inner.entries.iter().min_by_key(|(_, (_, used))| *used).map(|(k, _)| *k)
            {
                inner.entries.remove(&evict);
            }
        }
        inner.entries.insert(fingerprint, (decoded.clone(), tick));
        Ok(CacheOutcome::MissInserted(decoded))
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
