//! Fixed-size pages and their variable-length pushdown variant.
//!
//! A page is a 46-byte header followed by infimum and supremum
//! pseudo-records and a heap of user records chained in ascending key
//! order. Regular pages serialize to exactly `page_size` bytes; pushdown
//! result pages serialize to at most `page_size` bytes, and a page whose
//! records were all eliminated is marked empty and carries the header only.
//!
//! Serialized layout (little-endian):
//!
//! ```text
//! [0..8]   page_id      [8..16]  lsn          [16..18] level
//! [18..26] index_id     [26..28] n_records    [28..36] prev_page_id
//! [36..44] next_page_id [44..46] flags
//! [46..49] infimum record    [49..52] supremum record
//! [52..]   record heap, chained via the 2-byte next offsets
//! ```

use crate::record::{decode_record, encode_record, Record, RecordError, RecordStatus};
use crate::schema::Schema;
use crate::value::compare_keys;
use std::cmp::Ordering;

pub const PAGE_HEADER_LEN: usize = 46;
pub const INFIMUM_OFFSET: usize = 46;
pub const SUPREMUM_OFFSET: usize = 49;
pub const HEAP_START: usize = 52;

pub const DEFAULT_PAGE_SIZE: usize = 16384;
pub const MIN_PAGE_SIZE: usize = 4096;

pub const FLAG_NDP: u16 = 0x1;
pub const FLAG_NDP_EMPTY: u16 = 0x2;

/// Sentinel for "no sibling page".
pub const NO_PAGE: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageHeader {
    pub page_id: u64,
    pub lsn: u64,
    pub level: u16,
    pub index_id: u64,
    pub prev_page_id: u64,
    pub next_page_id: u64,
    pub flags: u16,
}

impl PageHeader {
    pub fn is_ndp(&self) -> bool {
        self.flags & FLAG_NDP != 0
    }

    pub fn is_ndp_empty(&self) -> bool {
        self.flags & FLAG_NDP_EMPTY != 0
    }

    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    pub header: PageHeader,
    /// User records in chain (ascending key) order. Pseudo-records are
    /// synthesized during serialization and never stored here.
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PageError {
    #[error("page truncated: {0} bytes")]
    Truncated(usize),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("broken record chain: {0}")]
    BrokenChain(String),
    #[error("record count mismatch: header says {header}, chain has {chain}")]
    CountMismatch { header: u16, chain: usize },
    #[error("records not in strictly ascending key order")]
    UnsortedChain,
    #[error("page {page_id} overflows page size {page_size} by {overflow} bytes")]
    Overflow { page_id: u64, page_size: usize, overflow: usize },
    #[error("non-NDP page contains NDP record status {0:?}")]
    NdpRecordInRegularPage(RecordStatus),
    #[error("NDP_EMPTY page must contain no records")]
    NonEmptyEmptyPage,
}

impl Page {
    pub fn new(header: PageHeader) -> Page {
        Page { header, records: Vec::new() }
    }

    pub fn new_leaf(page_id: u64, index_id: u64) -> Page {
        Page::new(PageHeader {
            page_id,
            lsn: 1,
            level: 0,
            index_id,
            prev_page_id: NO_PAGE,
            next_page_id: NO_PAGE,
            flags: 0,
        })
    }

    /// An empty pushdown-result page inheriting this page's identity.
    pub fn ndp_empty_like(&self) -> Page {
        let mut header = self.header.clone();
        header.flags |= FLAG_NDP | FLAG_NDP_EMPTY;
        Page { header, records: Vec::new() }
    }

    /// Iterates user records in chain order. Pseudo-records are not part of
    /// the in-memory representation, so nothing needs skipping here; an
    /// empty pushdown page yields nothing.
    pub fn iter(&self) -> impl Iterator<Item = &Record> {
        self.records.iter()
    }

    /// Inserts a user record keeping the chain key-sorted. Returns an error
    /// on duplicate keys.
    pub fn insert_user_record(&mut self, record: Record, schema: &Schema) -> Result<(), PageError> {
        let key = record.key(schema).to_vec();
        let pos = self.records.binary_search_by(|r| compare_keys(r.key(schema), &key));
        match pos {
            Ok(_) => Err(PageError::UnsortedChain),
            Err(at) => {
                self.records.insert(at, record);
                Ok(())
            }
        }
    }

    pub fn find_by_key(&self, key: &[crate::value::Value], schema: &Schema) -> Option<usize> {
        self.records.binary_search_by(|r| compare_keys(r.key(schema), key)).ok()
    }
}

fn check_status_partition(page: &Page) -> Result<(), PageError> {
    if !page.header.is_ndp() {
        if let Some(r) = page.records.iter().find(|r| r.status.is_ndp()) {
            return Err(PageError::NdpRecordInRegularPage(r.status));
        }
    }
    Ok(())
}

/// Serializes a page. Regular pages are padded to exactly `page_size`;
/// pushdown pages may be shorter but never longer. `projection` must be the
/// descriptor projection when the page holds projected records.
pub fn encode_page(
    page: &Page,
    schema: &Schema,
    projection: Option<&[usize]>,
    page_size: usize,
) -> Result<Vec<u8>, PageError> {
    check_status_partition(page)?;
    if page.header.is_ndp_empty() {
        if !page.records.is_empty() {
            return Err(PageError::NonEmptyEmptyPage);
        }
        let mut out = Vec::with_capacity(PAGE_HEADER_LEN);
        write_header(&page.header, 0, &mut out);
        return Ok(out);
    }

    let mut encoded: Vec<Vec<u8>> = Vec::with_capacity(page.records.len());
    for rec in &page.records {
        encoded.push(encode_record(schema, rec, projection)?);
    }

    let mut out = Vec::with_capacity(page_size.min(HEAP_START + 64 * encoded.len()));
    write_header(&page.header, page.records.len() as u16, &mut out);

    // Pseudo-records with chain pointers patched below.
    out.push(RecordStatus::Infimum as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.push(RecordStatus::Supremum as u8);
    out.extend_from_slice(&0u16.to_le_bytes());

    let mut offsets = Vec::with_capacity(encoded.len());
    let mut at = HEAP_START;
    for bytes in &encoded {
        offsets.push(at);
        at += bytes.len();
    }
    if at > page_size {
        return Err(PageError::Overflow {
            page_id: page.header.page_id,
            page_size,
            overflow: at - page_size,
        });
    }

    let first = offsets.first().copied().unwrap_or(SUPREMUM_OFFSET);
    out[INFIMUM_OFFSET + 1..INFIMUM_OFFSET + 3].copy_from_slice(&(first as u16).to_le_bytes());
    for (i, mut bytes) in encoded.into_iter().enumerate() {
        let next = offsets.get(i + 1).copied().unwrap_or(SUPREMUM_OFFSET);
        bytes[1..3].copy_from_slice(&(next as u16).to_le_bytes());
        out.extend_from_slice(&bytes);
    }

    if !page.header.is_ndp() {
        out.resize(page_size, 0);
    }
    Ok(out)
}

fn write_header(h: &PageHeader, n_records: u16, out: &mut Vec<u8>) {
    out.extend_from_slice(&h.page_id.to_le_bytes());
    out.extend_from_slice(&h.lsn.to_le_bytes());
    out.extend_from_slice(&h.level.to_le_bytes());
    out.extend_from_slice(&h.index_id.to_le_bytes());
    out.extend_from_slice(&n_records.to_le_bytes());
    out.extend_from_slice(&h.prev_page_id.to_le_bytes());
    out.extend_from_slice(&h.next_page_id.to_le_bytes());
    out.extend_from_slice(&h.flags.to_le_bytes());
}

pub fn decode_header(bytes: &[u8]) -> Result<(PageHeader, u16), PageError> {
    if bytes.len() < PAGE_HEADER_LEN {
        return Err(PageError::Truncated(bytes.len()));
    }
    let u64at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let u16at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    Ok((
        PageHeader {
            page_id: u64at(0),
            lsn: u64at(8),
            level: u16at(16),
            index_id: u64at(18),
            prev_page_id: u64at(28),
            next_page_id: u64at(36),
            flags: u16at(44),
        },
        u16at(26),
    ))
}

/// Decodes a page, walking the record chain from the infimum with cycle and
/// bounds checks, and verifying the ascending-key invariant.
pub fn decode_page(
    bytes: &[u8],
    schema: &Schema,
    projection: Option<&[usize]>,
) -> Result<Page, PageError> {
    let (header, n_records) = decode_header(bytes)?;
    if header.is_ndp_empty() {
        if n_records != 0 {
            return Err(PageError::NonEmptyEmptyPage);
        }
        return Ok(Page { header, records: Vec::new() });
    }
    if bytes.len() < HEAP_START {
        return Err(PageError::Truncated(bytes.len()));
    }

    let (inf, _, mut next) = decode_record(&bytes[INFIMUM_OFFSET..], schema, projection)?;
    if inf.status != RecordStatus::Infimum {
        return Err(PageError::BrokenChain(format!(
            "expected infimum at {INFIMUM_OFFSET}, found {:?}",
            inf.status
        )));
    }

    let mut records = Vec::with_capacity(n_records as usize);
    loop {
        let at = next as usize;
        if at >= bytes.len() {
            return Err(PageError::BrokenChain(format!("offset {at} out of bounds")));
        }
        let (rec, _, rec_next) = decode_record(&bytes[at..], schema, projection)?;
        match rec.status {
            RecordStatus::Supremum => break,
            RecordStatus::Infimum => {
                return Err(PageError::BrokenChain("chain revisits infimum".into()))
            }
            _ => {}
        }
        records.push(rec);
        if records.len() > n_records as usize {
            // More chain entries than the header admits: a cycle or corruption.
            return Err(PageError::BrokenChain(format!(
                "chain exceeds header record count {n_records}"
            )));
        }
        next = rec_next;
    }

    if records.len() != n_records as usize {
        return Err(PageError::CountMismatch { header: n_records, chain: records.len() });
    }
    for pair in records.windows(2) {
        if compare_keys(pair[0].key(schema), pair[1].key(schema)) != Ordering::Less {
            return Err(PageError::UnsortedChain);
        }
    }
    let page = Page { header, records };
    check_status_partition(&page)?;
    Ok(page)
}

/// Bytes a record contributes to the heap, used for fill decisions.
pub fn record_heap_len(
    schema: &Schema,
    record: &Record,
    projection: Option<&[usize]>,
) -> Result<usize, PageError> {
    Ok(encode_record(schema, record, projection)?.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{ColumnType as Ct, TypeTag as T, Value};

    fn schema() -> Schema {
        Schema::new("t", vec![("id", Ct::new(T::Int64)), ("v", Ct::new(T::Int64))], 1, 1).unwrap()
    }

    fn leaf_with_keys(keys: &[i64]) -> Page {
        let s = schema();
        let mut page = Page::new_leaf(7, 1);
        for &k in keys {
            page.insert_user_record(
                Record::ordinary(1, vec![Value::Int64(k), Value::Int64(k * 10)]),
                &s,
            )
            .unwrap();
        }
        page
    }

    #[test]
    fn out_of_order_inserts_iterate_sorted() {
        let page = leaf_with_keys(&[3, 1, 2]);
        let keys: Vec<i64> = page
            .iter()
            .map(|r| match r.values[0] {
                Value::Int64(k) => k,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(keys, vec![1, 2, 3]);
    }

    #[test]
    fn regular_page_is_exactly_page_size() {
        let s = schema();
        let page = leaf_with_keys(&[1, 2, 3]);
        let bytes = encode_page(&page, &s, None, MIN_PAGE_SIZE).unwrap();
        assert_eq!(bytes.len(), MIN_PAGE_SIZE);
        let back = decode_page(&bytes, &s, None).unwrap();
        assert_eq!(back, page);
    }

    #[test]
    fn empty_leaf_round_trips() {
        let s = schema();
        let page = leaf_with_keys(&[]);
        let bytes = encode_page(&page, &s, None, MIN_PAGE_SIZE).unwrap();
        let back = decode_page(&bytes, &s, None).unwrap();
        assert!(back.records.is_empty());
    }

    #[test]
    fn ndp_empty_page_is_header_only_and_yields_nothing() {
        let s = schema();
        let page = leaf_with_keys(&[1, 2]).ndp_empty_like();
        let bytes = encode_page(&page, &s, None, MIN_PAGE_SIZE).unwrap();
        assert_eq!(bytes.len(), PAGE_HEADER_LEN);
        let back = decode_page(&bytes, &s, None).unwrap();
        assert_eq!(back.iter().count(), 0);
        assert!(back.header.is_ndp_empty());
    }

    #[test]
    fn broken_chain_is_an_error() {
        let s = schema();
        let page = leaf_with_keys(&[1, 2, 3]);
        let mut bytes = encode_page(&page, &s, None, MIN_PAGE_SIZE).unwrap();
        // Point the infimum's next offset at itself to make a cycle.
        bytes[INFIMUM_OFFSET + 1..INFIMUM_OFFSET + 3]
            .copy_from_slice(&(INFIMUM_OFFSET as u16).to_le_bytes());
        assert!(matches!(decode_page(&bytes, &s, None), Err(PageError::BrokenChain(_))));

        let mut oob = encode_page(&page, &s, None, MIN_PAGE_SIZE).unwrap();
        oob[INFIMUM_OFFSET + 1..INFIMUM_OFFSET + 3].copy_from_slice(&u16::MAX.to_le_bytes());
        assert!(matches!(decode_page(&oob, &s, None), Err(PageError::BrokenChain(_))));
    }

    #[test]
    fn ndp_status_codes_rejected_in_regular_pages() {
        let s = schema();
        let mut page = leaf_with_keys(&[1]);
        page.records[0].status = RecordStatus::NdpProjection;
        assert!(matches!(
            encode_page(&page, &s, None, MIN_PAGE_SIZE),
            Err(PageError::NdpRecordInRegularPage(RecordStatus::NdpProjection))
        ));
    }

    #[test]
    fn overflow_is_a_hard_error() {
        let s = schema();
        let mut page = leaf_with_keys(&[]);
        for k in 0..200 {
            page.insert_user_record(
                Record::ordinary(1, vec![Value::Int64(k), Value::Int64(k)]),
                &s,
            )
            .unwrap();
        }
        // 200 records * 30 bytes each exceed a 4 KB page.
        assert!(matches!(
            encode_page(&page, &s, None, MIN_PAGE_SIZE),
            Err(PageError::Overflow { .. })
        ));
    }
}
