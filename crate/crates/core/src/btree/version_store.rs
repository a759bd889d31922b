//! Versioned page storage.
//!
//! Every page keeps the full list of its versions for the duration of a
//! run, ordered by LSN. A batch read carries the LSN captured under the
//! index latch, and the store serves the newest version at or below it,
//! which shields in-flight batches from concurrent structure changes.
//! Requesting an LSN below a page's oldest retained version is a hard
//! error: nothing is evicted during a run, so it can only mean a protocol
//! bug.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VersionStoreError {
    #[error("page {0} not found")]
    PageNotFound(u64),
    #[error("page {page_id} has no version at or below lsn {lsn} (oldest is {oldest})")]
    BelowOldest { page_id: u64, lsn: u64, oldest: u64 },
    #[error("lsn {lsn} not above page {page_id}'s newest version {newest}")]
    NonMonotonicLsn { page_id: u64, lsn: u64, newest: u64 },
}

/// (lsn, serialized page) pairs in ascending LSN order.
type Versions = Vec<(u64, Arc<[u8]>)>;

/// Append-only multi-version page store, shared between the tree mutator
/// and any number of readers (page-store services, fallback reads).
#[derive(Debug, Default)]
pub struct PageVersionStore {
    inner: RwLock<HashMap<u64, Versions>>,
    /// Total bytes appended, for reporting only.
    bytes_appended: AtomicU64,
}

impl PageVersionStore {
    pub fn new() -> PageVersionStore {
        PageVersionStore::default()
    }

    pub fn append(&self, page_id: u64, lsn: u64, bytes: Vec<u8>) -> Result<(), VersionStoreError> {
        let mut inner = self.inner.write().unwrap();
        let versions = inner.entry(page_id).or_default();
        if let Some(&(newest, _)) = versions.last() {
            if lsn <= newest {
                return Err(VersionStoreError::NonMonotonicLsn { page_id, lsn, newest });
            }
        }
        self.bytes_appended.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        versions.push((lsn, bytes.into()));
        Ok(())
    }

    /// The newest version with `version.lsn <= lsn`.
    pub fn lookup(&self, page_id: u64, lsn: u64) -> Result<Arc<[u8]>, VersionStoreError> {
        let inner = self.inner.read().unwrap();
        let versions = inner.get(&page_id).ok_or(VersionStoreError::PageNotFound(page_id))?;
        let at = versions.partition_point(|&(l, _)| l <= lsn);
        if at == 0 {
            return Err(VersionStoreError::BelowOldest {
                page_id,
                lsn,
                oldest: versions.first().map(|&(l, _)| l).unwrap_or(0),
            });
        }
        Ok(versions[at - 1].1.clone())
    }

    pub fn latest(&self, page_id: u64) -> Result<Arc<[u8]>, VersionStoreError> {
        let inner = self.inner.read().unwrap();
        let versions = inner.get(&page_id).ok_or(VersionStoreError::PageNotFound(page_id))?;
        Ok(versions.last().expect("no empty version lists").1.clone())
    }

    pub fn contains(&self, page_id: u64) -> bool {
        self.inner.read().unwrap().contains_key(&page_id)
    }

    pub fn page_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.inner.read().unwrap().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn version_count(&self, page_id: u64) -> usize {
        self.inner.read().unwrap().get(&page_id).map_or(0, |v| v.len())
    }

    /// Writes one slice file: a sequence of length-prefixed page versions in
    /// LSN order per page. The page bytes carry their own id and LSN.
    pub fn write_slice_file(
        &self,
        path: &Path,
        pages_in_slice: &[u64],
    ) -> std::io::Result<()> {
        let inner = self.inner.read().unwrap();
        let mut w = BufWriter::new(File::create(path)?);
        for page_id in pages_in_slice {
            if let Some(versions) = inner.get(page_id) {
                for (_, bytes) in versions {
                    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
                    w.write_all(bytes)?;
                }
            }
        }
        w.flush()
    }

    /// Loads every page version from a slice file into this store.
    pub fn load_slice_file(&self, path: &Path) -> std::io::Result<usize> {
        let mut r = BufReader::new(File::open(path)?);
        let mut count = 0usize;
        loop {
            let mut len_buf = [0u8; 4];
            match r.read_exact(&mut len_buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e),
            }
            let len = u32::from_le_bytes(len_buf) as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            let (header, _) = crate::page::decode_header(&bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            self.append(header.page_id, header.lsn, bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            count += 1;
        }
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_returns_greatest_version_at_or_below() {
        let store = PageVersionStore::new();
        store.append(7, 1, vec![1]).unwrap();
        store.append(7, 5, vec![5]).unwrap();
        store.append(7, 9, vec![9]).unwrap();

        assert_eq!(&*store.lookup(7, 1).unwrap(), &[1]);
        assert_eq!(&*store.lookup(7, 4).unwrap(), &[1]);
        assert_eq!(&*store.lookup(7, 5).unwrap(), &[5]);
        assert_eq!(&*store.lookup(7, 100).unwrap(), &[9]);
    }

    #[test]
    fn below_oldest_is_a_hard_error() {
        let store = PageVersionStore::new();
        store.append(7, 5, vec![5]).unwrap();
        assert!(matches!(
            store.lookup(7, 4),
            Err(VersionStoreError::BelowOldest { page_id: 7, lsn: 4, oldest: 5 })
        ));
    }

    #[test]
    fn lsns_strictly_increase_per_page() {
        let store = PageVersionStore::new();
        store.append(7, 5, vec![5]).unwrap();
        assert!(store.append(7, 5, vec![5]).is_err());
        assert!(store.append(7, 4, vec![4]).is_err());
        store.append(8, 4, vec![4]).unwrap();
    }

    #[test]
    fn missing_page_is_not_found() {
        let store = PageVersionStore::new();
        assert!(matches!(store.lookup(1, 1), Err(VersionStoreError::PageNotFound(1))));
    }
}
