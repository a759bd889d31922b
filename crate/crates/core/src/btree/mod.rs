//! The clustered B+-tree over versioned pages.
//!
//! The tree structure (directory, parents, root) lives on the compute
//! side and is share-latched during range enumeration; page contents live
//! in the [`PageVersionStore`] keyed by LSN, and a single global LSN per
//! tree advances on every write. Enumerating a range therefore works like
//! a short critical section: latch, capture the current LSN, walk
//! root-to-level-1 collecting leaf ids whose separator ranges intersect
//! the scan, release. Page reads against the captured LSN are immune to
//! later structure changes.
//!
//! Writes come from one mutator thread. Each write re-encodes the target
//! leaf as a new version at `lsn+1`, appends the prior record image to the
//! undo log, and may split pages on insert.

pub mod undo;
pub mod version_store;

pub use undo::{UndoEntry, UndoLog};
pub use version_store::{PageVersionStore, VersionStoreError};

use crate::page::{
    decode_page, encode_page, Page, PageError, PageHeader, HEAP_START, NO_PAGE,
};
use crate::record::{Record, RecordError, RecordStatus};
use crate::schema::Schema;
use crate::value::{compare_keys, Value, ValueError};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::ops::Bound;
use std::sync::{Arc, RwLock};

#[derive(Debug, Clone)]
pub struct BTreeConfig {
    pub page_size: usize,
    pub fill_factor: f64,
    pub slice_size_pages: u64,
}

impl Default for BTreeConfig {
    fn default() -> Self {
        BTreeConfig {
            page_size: crate::page::DEFAULT_PAGE_SIZE,
            fill_factor: 0.9,
            slice_size_pages: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BTreeError {
    #[error("page size {0} below the {min} minimum", min = crate::page::MIN_PAGE_SIZE)]
    PageSizeTooSmall(usize),
    #[error("input rows not strictly ascending by primary key")]
    UnsortedInput,
    #[error("duplicate primary key")]
    DuplicateKey,
    #[error("primary key not found")]
    KeyNotFound,
    #[error("row has {got} values, schema has {want} columns")]
    Arity { got: usize, want: usize },
    #[error("single record does not fit a page")]
    RowTooLarge,
    #[error(transparent)]
    Page(#[from] PageError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Version(#[from] VersionStoreError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("structural integrity: {0}")]
    Integrity(String),
}

/// Key-prefix-aware scan bounds. A bound may be a prefix of the primary
/// key; comparison then considers only the bound's columns, so
/// `orderkey <= K` keeps every `(K, *)` row in range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRange {
    pub low: Bound<Vec<Value>>,
    pub high: Bound<Vec<Value>>,
}

fn cmp_prefix(key: &[Value], bound: &[Value]) -> Ordering {
    let n = bound.len().min(key.len());
    match compare_keys(&key[..n], &bound[..n]) {
        Ordering::Equal if key.len() < bound.len() => Ordering::Less,
        ord => ord,
    }
}

impl ScanRange {
    pub fn all() -> ScanRange {
        ScanRange { low: Bound::Unbounded, high: Bound::Unbounded }
    }

    pub fn point(key: Vec<Value>) -> ScanRange {
        ScanRange { low: Bound::Included(key.clone()), high: Bound::Included(key) }
    }

    pub fn contains(&self, key: &[Value]) -> bool {
        let low_ok = match &self.low {
            Bound::Unbounded => true,
            Bound::Included(l) => cmp_prefix(key, l) != Ordering::Less,
            Bound::Excluded(l) => cmp_prefix(key, l) == Ordering::Greater,
        };
        let high_ok = match &self.high {
            Bound::Unbounded => true,
            Bound::Included(h) => cmp_prefix(key, h) != Ordering::Greater,
            Bound::Excluded(h) => cmp_prefix(key, h) == Ordering::Less,
        };
        low_ok && high_ok
    }

    /// Whether a separator range `[low, high)` can hold qualifying keys.
    /// `None` bounds are unbounded on that side. A full-length `Included`
    /// low bound equal to the leaf's exclusive upper separator excludes
    /// the leaf (its keys are all strictly below the bound); a prefix
    /// bound in the same position cannot, because keys under the upper
    /// separator may still share the bound's prefix.
    pub fn intersects(&self, leaf_low: Option<&[Value]>, leaf_high: Option<&[Value]>) -> bool {
        match (&self.low, leaf_high) {
            (Bound::Included(l), Some(hi)) => {
                match cmp_prefix(hi, l) {
                    Ordering::Less => return false,
                    Ordering::Equal if l.len() >= hi.len() => return false,
                    _ => {}
                }
            }
            (Bound::Excluded(l), Some(hi)) if cmp_prefix(hi, l) != Ordering::Greater => {
                return false
            }
            _ => {}
        }
        match (&self.high, leaf_low) {
            (Bound::Included(h), Some(lo)) if cmp_prefix(lo, h) == Ordering::Greater => {
                return false
            }
            (Bound::Excluded(h), Some(lo)) if cmp_prefix(lo, h) != Ordering::Less => return false,
            _ => {}
        }
        true
    }
}

/// Sortable wrapper for key vectors of one schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdKey(pub Vec<Value>);

impl PartialOrd for OrdKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdKey {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_keys(&self.0, &other.0)
    }
}

/// Directory entry: where a page sits in the tree and which slice owns it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageMeta {
    pub level: u16,
    /// Inclusive separator; `None` on the leftmost page of its level.
    pub low: Option<Vec<Value>>,
    /// Exclusive upper separator; `None` on the rightmost page of its level.
    pub high: Option<Vec<Value>>,
    pub slice_id: u32,
}

#[derive(Debug)]
struct Inner {
    /// (lsn, root page id, height) — appended on every root change so that
    /// traversals at an older LSN start from the root of that time.
    root_history: Vec<(u64, u64, u16)>,
    directory: HashMap<u64, PageMeta>,
    /// Leaf lookup by low separator; the leftmost leaf sorts first.
    leaf_by_low: BTreeMap<Option<OrdKey>, u64>,
    parent: HashMap<u64, u64>,
    next_page_id: u64,
    current_lsn: u64,
}

#[derive(Debug)]
pub struct BTree {
    pub index_id: u64,
    pub schema: Schema,
    pub config: BTreeConfig,
    store: Arc<PageVersionStore>,
    undo: Arc<UndoLog>,
    inner: RwLock<Inner>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOp {
    Insert { values: Vec<Value> },
    Update { pk: Vec<Value>, non_key_values: Vec<Value> },
    Delete { pk: Vec<Value> },
}

/// (leaf id, leaf high separator) pairs a traversal collected.
type LeafSpan = Vec<(u64, Option<Vec<Value>>)>;

/// One latched batch enumeration: the LSN pins the sub-tree structure the
/// leaf ids were extracted from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchCapture {
    pub lsn: u64,
    pub leaf_ids: Vec<u64>,
    /// Resume position (exclusive) for the next batch; `None` when this
    /// batch exhausted the range.
    pub next_position: Option<Vec<Value>>,
}

impl BTree {
    /// Builds a tree from strictly ascending rows. All pages start at LSN 1;
    /// leaves fill to roughly `fill_factor` and are assigned to slices in
    /// contiguous runs of `slice_size_pages`.
    pub fn bulk_load(
        rows: Vec<Vec<Value>>,
        schema: Schema,
        config: BTreeConfig,
        store: Arc<PageVersionStore>,
        undo: Arc<UndoLog>,
    ) -> Result<BTree, BTreeError> {
        if config.page_size < crate::page::MIN_PAGE_SIZE {
            return Err(BTreeError::PageSizeTooSmall(config.page_size));
        }
        let index_id = schema.index_id;
        let ncols = schema.column_count();
        let target = ((config.page_size - HEAP_START) as f64 * config.fill_factor) as usize;
        let hard_cap = config.page_size - HEAP_START;

        let mut inner = Inner {
            root_history: Vec::new(),
            directory: HashMap::new(),
            leaf_by_low: BTreeMap::new(),
            parent: HashMap::new(),
            next_page_id: 1,
            current_lsn: 1,
        };
        let mut pages: Vec<(Page, Vec<Value>)> = Vec::new(); // (leaf, min key)

        let mut current = Page::new_leaf(inner.next_page_id, index_id);
        inner.next_page_id += 1;
        let mut current_bytes = 0usize;
        let mut prev_key: Option<Vec<Value>> = None;

        for row in rows {
            if row.len() != ncols {
                return Err(BTreeError::Arity { got: row.len(), want: ncols });
            }
            let key = row[..schema.pk_prefix_len].to_vec();
            if let Some(prev) = &prev_key {
                match compare_keys(prev, &key) {
                    Ordering::Less => {}
                    Ordering::Equal => return Err(BTreeError::DuplicateKey),
                    Ordering::Greater => return Err(BTreeError::UnsortedInput),
                }
            }
            prev_key = Some(key.clone());
            let record = Record::ordinary(crate::mvcc::LOAD_TRX_ID, row);
            let len = crate::page::record_heap_len(&schema, &record, None)?;
            if len > hard_cap {
                return Err(BTreeError::RowTooLarge);
            }
            if current_bytes + len > target && !current.records.is_empty() {
                let min_key = current.records[0].key(&schema).to_vec();
                pages.push((std::mem::replace(&mut current, Page::new_leaf(inner.next_page_id, index_id)), min_key));
                inner.next_page_id += 1;
                current_bytes = 0;
            }
            current_bytes += len;
            current.records.push(record);
        }
        let min_key =
            current.records.first().map(|r| r.key(&schema).to_vec()).unwrap_or_default();
        pages.push((current, min_key));

        // Link leaves and register them in the directory.
        let n_leaves = pages.len();
        for i in 0..n_leaves {
            let (prev, next) = (
                if i == 0 { NO_PAGE } else { pages[i - 1].0.header.page_id },
                if i + 1 == n_leaves { NO_PAGE } else { pages[i + 1].0.header.page_id },
            );
            pages[i].0.header.prev_page_id = prev;
            pages[i].0.header.next_page_id = next;
        }
        for (i, (page, min_key)) in pages.iter().enumerate() {
            let low = if i == 0 { None } else { Some(min_key.clone()) };
            let high = if i + 1 == n_leaves { None } else { Some(pages[i + 1].1.clone()) };
            let slice_id = (i as u64 / config.slice_size_pages) as u32;
            inner.directory.insert(
                page.header.page_id,
                PageMeta { level: 0, low: low.clone(), high, slice_id },
            );
            inner.leaf_by_low.insert(low.map(OrdKey), page.header.page_id);
        }

        // Build upper levels until a single root remains.
        let mut level_nodes: Vec<(u64, Vec<Value>)> =
            pages.iter().map(|(p, k)| (p.header.page_id, k.clone())).collect();
        for (page, _) in &pages {
            store.append(page.header.page_id, 1, encode_page(page, &schema, None, config.page_size)?)?;
        }
        let mut level: u16 = 0;
        while level_nodes.len() > 1 {
            level += 1;
            let mut parents: Vec<(Page, Vec<Value>)> = Vec::new();
            let mut node = Page::new(PageHeader {
                page_id: inner.next_page_id,
                lsn: 1,
                level,
                index_id,
                prev_page_id: NO_PAGE,
                next_page_id: NO_PAGE,
                flags: 0,
            });
            inner.next_page_id += 1;
            let mut node_bytes = 0usize;
            for (child_id, sep) in &level_nodes {
                let rec = Record::node_ptr(*child_id, sep.clone());
                let len = crate::page::record_heap_len(&schema, &rec, None)?;
                if node_bytes + len > target && !node.records.is_empty() {
                    let min = node.records[0].values.clone();
                    parents.push((
                        std::mem::replace(
                            &mut node,
                            Page::new(PageHeader {
                                page_id: inner.next_page_id,
                                lsn: 1,
                                level,
                                index_id,
                                prev_page_id: NO_PAGE,
                                next_page_id: NO_PAGE,
                                flags: 0,
                            }),
                        ),
                        min,
                    ));
                    inner.next_page_id += 1;
                    node_bytes = 0;
                }
                node_bytes += len;
                node.records.push(rec);
            }
            let min = node.records[0].values.clone();
            parents.push((node, min));

            for (i, (page, min_key)) in parents.iter().enumerate() {
                let low = if i == 0 { None } else { Some(min_key.clone()) };
                let high =
                    if i + 1 == parents.len() { None } else { Some(parents[i + 1].1.clone()) };
                // Internal pages live in the slice of their leftmost child.
                let first_child = page.records[0].child_page_id.unwrap();
                let slice_id = inner.directory[&first_child].slice_id;
                inner
                    .directory
                    .insert(page.header.page_id, PageMeta { level, low, high, slice_id });
                for rec in &page.records {
                    inner.parent.insert(rec.child_page_id.unwrap(), page.header.page_id);
                }
                store.append(
                    page.header.page_id,
                    1,
                    encode_page(page, &schema, None, config.page_size)?,
                )?;
            }
            level_nodes = parents.iter().map(|(p, k)| (p.header.page_id, k.clone())).collect();
        }

        let root = level_nodes[0].0;
        inner.root_history.push((1, root, level + 1));
        Ok(BTree { index_id, schema, config, store, undo, inner: RwLock::new(inner) })
    }

    /// Reopens a tree over an existing version store (pages loaded from
    /// slice files), rebuilding the directory, parent links, and leaf
    /// order by walking the structure from the root at `current_lsn`.
    #[allow(clippy::too_many_arguments)]
    pub fn open(
        schema: Schema,
        config: BTreeConfig,
        store: Arc<PageVersionStore>,
        undo: Arc<UndoLog>,
        root_page_id: u64,
        current_lsn: u64,
        next_page_id: u64,
        page_to_slice: &HashMap<u64, u32>,
    ) -> Result<BTree, BTreeError> {
        let mut inner = Inner {
            root_history: Vec::new(),
            directory: HashMap::new(),
            leaf_by_low: BTreeMap::new(),
            parent: HashMap::new(),
            next_page_id,
            current_lsn,
        };

        struct Walker<'a> {
            schema: &'a Schema,
            store: &'a PageVersionStore,
            lsn: u64,
            page_to_slice: &'a HashMap<u64, u32>,
        }
        impl Walker<'_> {
            fn walk(
                &self,
                inner: &mut Inner,
                page_id: u64,
                low: Option<Vec<Value>>,
                high: Option<Vec<Value>>,
            ) -> Result<u16, BTreeError> {
                let bytes = self.store.lookup(page_id, self.lsn)?;
                let page = decode_page(&bytes, self.schema, None)?;
                let slice_id = self.page_to_slice.get(&page_id).copied().unwrap_or(0);
                inner.directory.insert(
                    page_id,
                    PageMeta { level: page.header.level, low: low.clone(), high: high.clone(), slice_id },
                );
                if page.header.level == 0 {
                    inner.leaf_by_low.insert(low.map(OrdKey), page_id);
                    return Ok(0);
                }
                let n = page.records.len();
                for (i, rec) in page.records.iter().enumerate() {
                    if rec.status != RecordStatus::NodePtr {
                        return Err(BTreeError::Integrity(format!(
                            "non-node-ptr record in internal page {page_id}"
                        )));
                    }
                    let child = rec.child_page_id.unwrap();
                    inner.parent.insert(child, page_id);
                    let child_low = if i == 0 { low.clone() } else { Some(rec.values.clone()) };
                    let child_high = if i + 1 < n {
                        Some(page.records[i + 1].values.clone())
                    } else {
                        high.clone()
                    };
                    self.walk(inner, child, child_low, child_high)?;
                }
                Ok(page.header.level)
            }
        }

        let walker =
            Walker { schema: &schema, store: &store, lsn: current_lsn, page_to_slice };
        let root_level = walker.walk(&mut inner, root_page_id, None, None)?;
        inner.root_history.push((1, root_page_id, root_level + 1));
        Ok(BTree { index_id: schema.index_id, schema, config, store, undo, inner: RwLock::new(inner) })
    }

    pub fn store(&self) -> &Arc<PageVersionStore> {
        &self.store
    }

    pub fn undo(&self) -> &Arc<UndoLog> {
        &self.undo
    }

    pub fn current_lsn(&self) -> u64 {
        self.inner.read().unwrap().current_lsn
    }

    pub fn height(&self) -> u16 {
        self.inner.read().unwrap().root_history.last().unwrap().2
    }

    pub fn root_page_id(&self) -> u64 {
        self.inner.read().unwrap().root_history.last().unwrap().1
    }

    pub fn next_page_id(&self) -> u64 {
        self.inner.read().unwrap().next_page_id
    }

    pub fn leaf_count(&self) -> usize {
        self.inner.read().unwrap().leaf_by_low.len()
    }

    pub fn page_count(&self) -> usize {
        self.inner.read().unwrap().directory.len()
    }

    /// Current directory as (page_id, meta), leaves ordered before parents
    /// by level then by separator.
    pub fn directory_snapshot(&self) -> Vec<(u64, PageMeta)> {
        let inner = self.inner.read().unwrap();
        let mut out: Vec<(u64, PageMeta)> =
            inner.directory.iter().map(|(id, m)| (*id, m.clone())).collect();
        out.sort_by(|a, b| {
            a.1.level.cmp(&b.1.level).then_with(|| match (&a.1.low, &b.1.low) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Less,
                (Some(_), None) => Ordering::Greater,
                (Some(x), Some(y)) => compare_keys(x, y),
            })
        });
        out
    }

    /// Leaf page ids left to right (current structure).
    pub fn leaf_ids_in_order(&self) -> Vec<u64> {
        self.inner.read().unwrap().leaf_by_low.values().copied().collect()
    }

    pub fn slice_of(&self, page_id: u64) -> Option<u32> {
        self.inner.read().unwrap().directory.get(&page_id).map(|m| m.slice_id)
    }

    /// Live page-to-slice routing for the SAL: pages created by splits
    /// inherit their left sibling's slice and resolve here immediately.
    pub fn as_slice_router(self: &std::sync::Arc<Self>) -> std::sync::Arc<dyn crate::sal::SliceRouter> {
        self.clone()
    }

    /// page_id -> slice_id over every page of the tree.
    pub fn slice_map(&self) -> HashMap<u64, u32> {
        self.inner.read().unwrap().directory.iter().map(|(id, m)| (*id, m.slice_id)).collect()
    }

    pub fn slice_ids(&self) -> Vec<u32> {
        let inner = self.inner.read().unwrap();
        let mut ids: Vec<u32> = inner.directory.values().map(|m| m.slice_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Pages belonging to one slice, for slice-file export.
    pub fn pages_in_slice(&self, slice_id: u32) -> Vec<u64> {
        let inner = self.inner.read().unwrap();
        let mut ids: Vec<u64> = inner
            .directory
            .iter()
            .filter(|(_, m)| m.slice_id == slice_id)
            .map(|(id, _)| *id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Exactly the leaves whose separator range intersects the scan range,
    /// extracted from the level-1 pages of the sub-tree structure at `lsn`.
    /// The structure is share-latched for the duration of the walk.
    pub fn level1_children_in_range(
        &self,
        range: &ScanRange,
        lsn: u64,
    ) -> Result<Vec<u64>, BTreeError> {
        let inner = self.inner.read().unwrap();
        Ok(self.collect_leaves(&inner, range, lsn)?.into_iter().map(|(id, _)| id).collect())
    }

    /// Latch, capture the current LSN, enumerate up to `limit` leaves in
    /// range starting after `position`, release. The returned LSN pins the
    /// structure the ids came from.
    pub fn capture_batch(
        &self,
        range: &ScanRange,
        position: Option<&[Value]>,
        limit: usize,
    ) -> Result<BatchCapture, BTreeError> {
        let inner = self.inner.read().unwrap();
        let lsn = inner.current_lsn;
        let enum_range = match position {
            None => range.clone(),
            Some(pos) => {
                ScanRange { low: Bound::Excluded(pos.to_vec()), high: range.high.clone() }
            }
        };
        let leaves = self.collect_leaves(&inner, &enum_range, lsn)?;
        let limit = limit.max(1);
        let take = leaves.len().min(limit);
        let leaf_ids: Vec<u64> = leaves[..take].iter().map(|(id, _)| *id).collect();
        let next_position = if take < leaves.len() {
            // The high separator of the last taken leaf resumes the scan.
            leaves[take - 1].1.clone()
        } else {
            None
        };
        Ok(BatchCapture { lsn, leaf_ids, next_position })
    }

    /// Walks root → level 1 at `lsn`, collecting (leaf id, leaf high
    /// separator) pairs for leaves intersecting the range.
    fn collect_leaves(
        &self,
        inner: &Inner,
        range: &ScanRange,
        lsn: u64,
    ) -> Result<LeafSpan, BTreeError> {
        let at = inner.root_history.partition_point(|&(l, _, _)| l <= lsn);
        if at == 0 {
            return Err(BTreeError::Integrity(format!("no root at lsn {lsn}")));
        }
        let (_, root, height) = inner.root_history[at - 1];
        if height == 1 {
            return Ok(vec![(root, None)]);
        }
        let mut out = Vec::new();
        self.descend(root, None, None, range, lsn, &mut out)?;
        Ok(out)
    }

    fn descend(
        &self,
        page_id: u64,
        low: Option<Vec<Value>>,
        high: Option<Vec<Value>>,
        range: &ScanRange,
        lsn: u64,
        out: &mut LeafSpan,
    ) -> Result<(), BTreeError> {
        let bytes = self.store.lookup(page_id, lsn)?;
        let page = decode_page(&bytes, &self.schema, None)?;
        if page.header.level == 0 {
            return Err(BTreeError::Integrity(format!("descended into leaf {page_id}")));
        }
        let n = page.records.len();
        for (i, rec) in page.records.iter().enumerate() {
            if rec.status != RecordStatus::NodePtr {
                return Err(BTreeError::Integrity(format!(
                    "non-node-ptr record in internal page {page_id}"
                )));
            }
            let child = rec.child_page_id.unwrap();
            let child_low =
                if i == 0 { low.clone() } else { Some(rec.values.clone()) };
            let child_high = if i + 1 < n {
                Some(page.records[i + 1].values.clone())
            } else {
                high.clone()
            };
            if !range.intersects(child_low.as_deref(), child_high.as_deref()) {
                continue;
            }
            if page.header.level == 1 {
                out.push((child, child_high));
            } else {
                self.descend(child, child_low, child_high, range, lsn, out)?;
            }
        }
        Ok(())
    }

    /// Applies one auto-committed write: a new version of the touched
    /// leaf (plus any pages changed by splits) at `lsn+1` and an undo
    /// entry holding the prior record image.
    pub fn apply_write(&self, txn_id: u64, op: WriteOp) -> Result<(), BTreeError> {
        let mut inner = self.inner.write().unwrap();
        let pk = match &op {
            WriteOp::Insert { values } => {
                if values.len() != self.schema.column_count() {
                    return Err(BTreeError::Arity {
                        got: values.len(),
                        want: self.schema.column_count(),
                    });
                }
                values[..self.schema.pk_prefix_len].to_vec()
            }
            WriteOp::Update { pk, .. } | WriteOp::Delete { pk } => pk.clone(),
        };

        let leaf_id = *inner
            .leaf_by_low
            .range(..=Some(OrdKey(pk.clone())))
            .next_back()
            .map(|(_, id)| id)
            .ok_or_else(|| BTreeError::Integrity("no leaves".into()))?;

        let bytes = self.store.latest(leaf_id)?;
        let mut leaf = decode_page(&bytes, &self.schema, None)?;
        let lsn = inner.current_lsn + 1;
        inner.current_lsn = lsn;
        leaf.header.lsn = lsn;

        let undo_entry = match op {
            WriteOp::Insert { values } => {
                if leaf.find_by_key(&pk, &self.schema).is_some() {
                    return Err(BTreeError::DuplicateKey);
                }
                leaf.insert_user_record(Record::ordinary(txn_id, values), &self.schema)?;
                UndoEntry { trx_id: txn_id, prior: None }
            }
            WriteOp::Update { pk: _, non_key_values } => {
                let at = leaf.find_by_key(&pk, &self.schema).ok_or(BTreeError::KeyNotFound)?;
                let old = leaf.records[at].clone();
                if old.delete_mark {
                    return Err(BTreeError::KeyNotFound);
                }
                let want = self.schema.column_count() - self.schema.pk_prefix_len;
                if non_key_values.len() != want {
                    return Err(BTreeError::Arity { got: non_key_values.len(), want });
                }
                let rec = &mut leaf.records[at];
                rec.trx_id = txn_id;
                rec.values.truncate(self.schema.pk_prefix_len);
                rec.values.extend(non_key_values);
                UndoEntry { trx_id: txn_id, prior: Some(old) }
            }
            WriteOp::Delete { pk: _ } => {
                let at = leaf.find_by_key(&pk, &self.schema).ok_or(BTreeError::KeyNotFound)?;
                let old = leaf.records[at].clone();
                if old.delete_mark {
                    return Err(BTreeError::KeyNotFound);
                }
                let rec = &mut leaf.records[at];
                rec.trx_id = txn_id;
                rec.delete_mark = true;
                UndoEntry { trx_id: txn_id, prior: Some(old) }
            }
        };

        match encode_page(&leaf, &self.schema, None, self.config.page_size) {
            Ok(bytes) => self.store.append(leaf_id, lsn, bytes)?,
            Err(PageError::Overflow { .. }) => {
                self.split_leaf(&mut inner, leaf, lsn)?;
            }
            Err(e) => return Err(e.into()),
        }
        self.undo.push(self.index_id, pk, undo_entry);
        Ok(())
    }

    /// Splits an over-full leaf, writing both halves (and the adjusted
    /// right sibling and ancestors) at the same LSN.
    fn split_leaf(&self, inner: &mut Inner, mut left: Page, lsn: u64) -> Result<(), BTreeError> {
        let mid = left.records.len() / 2;
        let right_records: Vec<Record> = left.records.split_off(mid);
        let sep = right_records[0].key(&self.schema).to_vec();
        let right_id = inner.next_page_id;
        inner.next_page_id += 1;

        let mut right = Page::new(PageHeader {
            page_id: right_id,
            lsn,
            level: 0,
            index_id: self.index_id,
            prev_page_id: left.header.page_id,
            next_page_id: left.header.next_page_id,
            flags: 0,
        });
        right.records = right_records;
        let old_next = left.header.next_page_id;
        left.header.next_page_id = right_id;

        // Directory: the new right page takes the upper half of the left
        // page's range and stays in the same slice.
        let left_meta =
            inner.directory.get(&left.header.page_id).cloned().ok_or_else(|| {
                BTreeError::Integrity(format!("page {} missing from directory", left.header.page_id))
            })?;
        let right_meta = PageMeta {
            level: 0,
            low: Some(sep.clone()),
            high: left_meta.high.clone(),
            slice_id: left_meta.slice_id,
        };
        inner.directory.insert(right_id, right_meta);
        if let Some(m) = inner.directory.get_mut(&left.header.page_id) {
            m.high = Some(sep.clone());
        }
        inner.leaf_by_low.insert(Some(OrdKey(sep.clone())), right_id);

        self.store.append(
            left.header.page_id,
            lsn,
            encode_page(&left, &self.schema, None, self.config.page_size)?,
        )?;
        self.store.append(
            right_id,
            lsn,
            encode_page(&right, &self.schema, None, self.config.page_size)?,
        )?;
        if old_next != NO_PAGE {
            let bytes = self.store.latest(old_next)?;
            let mut sibling = decode_page(&bytes, &self.schema, None)?;
            sibling.header.prev_page_id = right_id;
            sibling.header.lsn = lsn;
            self.store.append(
                old_next,
                lsn,
                encode_page(&sibling, &self.schema, None, self.config.page_size)?,
            )?;
        }

        self.insert_node_ptr(inner, left.header.page_id, right_id, sep, lsn)
    }

    /// Inserts the separator for a fresh right sibling into the parent,
    /// splitting upward as needed; grows a new root when the old root split.
    fn insert_node_ptr(
        &self,
        inner: &mut Inner,
        left_id: u64,
        right_id: u64,
        sep: Vec<Value>,
        lsn: u64,
    ) -> Result<(), BTreeError> {
        let parent_id = match inner.parent.get(&left_id) {
            Some(p) => *p,
            None => {
                // left was the root: grow the tree by one level.
                let (_, old_root, height) = *inner.root_history.last().unwrap();
                debug_assert_eq!(old_root, left_id);
                let new_root_id = inner.next_page_id;
                inner.next_page_id += 1;
                let left_meta = inner.directory[&left_id].clone();
                let left_sep = match &left_meta.low {
                    Some(k) => k.clone(),
                    None => {
                        // Leftmost page: use its first record's key as the
                        // stored separator; its effective range stays open.
                        let bytes = self.store.lookup(left_id, lsn)?;
                        let page = decode_page(&bytes, &self.schema, None)?;
                        match page.header.level {
                            0 => page.records[0].key(&self.schema).to_vec(),
                            _ => page.records[0].values.clone(),
                        }
                    }
                };
                let mut root = Page::new(PageHeader {
                    page_id: new_root_id,
                    lsn,
                    level: left_meta.level + 1,
                    index_id: self.index_id,
                    prev_page_id: NO_PAGE,
                    next_page_id: NO_PAGE,
                    flags: 0,
                });
                root.records.push(Record::node_ptr(left_id, left_sep));
                root.records.push(Record::node_ptr(right_id, sep));
                inner.directory.insert(
                    new_root_id,
                    PageMeta {
                        level: left_meta.level + 1,
                        low: None,
                        high: None,
                        slice_id: left_meta.slice_id,
                    },
                );
                inner.parent.insert(left_id, new_root_id);
                inner.parent.insert(right_id, new_root_id);
                inner.root_history.push((lsn, new_root_id, height + 1));
                self.store.append(
                    new_root_id,
                    lsn,
                    encode_page(&root, &self.schema, None, self.config.page_size)?,
                )?;
                return Ok(());
            }
        };

        let bytes = self.store.latest(parent_id)?;
        let mut parent = decode_page(&bytes, &self.schema, None)?;
        parent.header.lsn = lsn;
        let at = parent
            .records
            .iter()
            .position(|r| r.child_page_id == Some(left_id))
            .ok_or_else(|| {
                BTreeError::Integrity(format!("parent {parent_id} lost child {left_id}"))
            })?;
        parent.records.insert(at + 1, Record::node_ptr(right_id, sep.clone()));
        inner.parent.insert(right_id, parent_id);

        match encode_page(&parent, &self.schema, None, self.config.page_size) {
            Ok(bytes) => {
                self.store.append(parent_id, lsn, bytes)?;
                Ok(())
            }
            Err(PageError::Overflow { .. }) => self.split_internal(inner, parent, lsn),
            Err(e) => Err(e.into()),
        }
    }

    fn split_internal(&self, inner: &mut Inner, mut left: Page, lsn: u64) -> Result<(), BTreeError> {
        let mid = left.records.len() / 2;
        let right_records: Vec<Record> = left.records.split_off(mid);
        let sep = right_records[0].values.clone();
        let right_id = inner.next_page_id;
        inner.next_page_id += 1;

        let mut right = Page::new(PageHeader {
            page_id: right_id,
            lsn,
            level: left.header.level,
            index_id: self.index_id,
            prev_page_id: left.header.page_id,
            next_page_id: left.header.next_page_id,
            flags: 0,
        });
        right.records = right_records;
        left.header.next_page_id = right_id;

        let left_meta = inner.directory[&left.header.page_id].clone();
        inner.directory.insert(
            right_id,
            PageMeta {
                level: left.header.level,
                low: Some(sep.clone()),
                high: left_meta.high.clone(),
                slice_id: left_meta.slice_id,
            },
        );
        if let Some(m) = inner.directory.get_mut(&left.header.page_id) {
            m.high = Some(sep.clone());
        }
        for rec in &right.records {
            inner.parent.insert(rec.child_page_id.unwrap(), right_id);
        }

        self.store.append(
            left.header.page_id,
            lsn,
            encode_page(&left, &self.schema, None, self.config.page_size)?,
        )?;
        self.store.append(
            right_id,
            lsn,
            encode_page(&right, &self.schema, None, self.config.page_size)?,
        )?;

        self.insert_node_ptr(inner, left.header.page_id, right_id, sep, lsn)
    }
}

impl crate::sal::SliceRouter for BTree {
    fn slice_of_page(&self, page_id: u64) -> Option<u32> {
        self.slice_of(page_id)
    }
}

#[cfg(test)]
mod tests;
