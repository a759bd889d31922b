use super::*;
use crate::value::{ColumnType as Ct, TypeTag as T};

fn schema() -> Schema {
    Schema::new(
        "t",
        vec![("id", Ct::new(T::Int64)), ("v", Ct::new(T::Int64))],
        1,
        42,
    )
    .unwrap()
}

fn row(id: i64, v: i64) -> Vec<Value> {
    vec![Value::Int64(id), Value::Int64(v)]
}

fn small_config() -> BTreeConfig {
    BTreeConfig { page_size: 4096, fill_factor: 0.9, slice_size_pages: 8 }
}

fn build(rows: Vec<Vec<Value>>, config: BTreeConfig) -> BTree {
    BTree::bulk_load(
        rows,
        schema(),
        config,
        Arc::new(PageVersionStore::new()),
        Arc::new(UndoLog::new()),
    )
    .unwrap()
}

/// Reads every row by walking enumerated leaves at `lsn`.
fn scan_rows_at(tree: &BTree, lsn: u64) -> Vec<Vec<Value>> {
    let leaves = tree.level1_children_in_range(&ScanRange::all(), lsn).unwrap();
    let mut rows = Vec::new();
    for leaf in leaves {
        let bytes = tree.store().lookup(leaf, lsn).unwrap();
        let page = decode_page(&bytes, &tree.schema, None).unwrap();
        for rec in page.iter() {
            rows.push(rec.values.clone());
        }
    }
    rows
}

#[test]
fn empty_tree_is_a_single_empty_root_leaf() {
    let tree = build(vec![], small_config());
    assert_eq!(tree.height(), 1);
    assert_eq!(tree.leaf_count(), 1);
    assert_eq!(scan_rows_at(&tree, tree.current_lsn()), Vec::<Vec<Value>>::new());
}

#[test]
fn full_scan_returns_input_rows_in_order() {
    let rows: Vec<Vec<Value>> = (0..10_000).map(|i| row(i, i * 7)).collect();
    let tree = build(rows.clone(), small_config());
    assert!(tree.height() >= 2, "10k rows should not fit one 4k page");
    assert_eq!(scan_rows_at(&tree, tree.current_lsn()), rows);
}

#[test]
fn bulk_load_rejects_unsorted_and_duplicate_keys() {
    let err = BTree::bulk_load(
        vec![row(2, 0), row(1, 0)],
        schema(),
        small_config(),
        Arc::new(PageVersionStore::new()),
        Arc::new(UndoLog::new()),
    )
    .unwrap_err();
    assert_eq!(err, BTreeError::UnsortedInput);

    let err = BTree::bulk_load(
        vec![row(1, 0), row(1, 1)],
        schema(),
        small_config(),
        Arc::new(PageVersionStore::new()),
        Arc::new(UndoLog::new()),
    )
    .unwrap_err();
    assert_eq!(err, BTreeError::DuplicateKey);
}

#[test]
fn slices_are_contiguous_leaf_ranges() {
    let rows: Vec<Vec<Value>> = (0..10_000).map(|i| row(i, i)).collect();
    let tree = build(rows, small_config());
    let slices = tree.slice_ids();
    assert!(slices.len() >= 3, "expected >= 3 slices, got {slices:?}");
    // Leaves in key order map to non-decreasing slice ids.
    let leaf_slices: Vec<u32> =
        tree.leaf_ids_in_order().iter().map(|id| tree.slice_of(*id).unwrap()).collect();
    let mut sorted = leaf_slices.clone();
    sorted.sort_unstable();
    assert_eq!(leaf_slices, sorted);
}

#[test]
fn unbounded_enumeration_matches_leaf_order_and_next_pointers() {
    let rows: Vec<Vec<Value>> = (0..5_000).map(|i| row(i, i)).collect();
    let tree = build(rows, small_config());
    let lsn = tree.current_lsn();
    let enumerated = tree.level1_children_in_range(&ScanRange::all(), lsn).unwrap();
    assert_eq!(enumerated, tree.leaf_ids_in_order());

    // The same set must be reachable by chasing leaf next pointers.
    let mut walked = vec![enumerated[0]];
    loop {
        let bytes = tree.store().lookup(*walked.last().unwrap(), lsn).unwrap();
        let (header, _) = crate::page::decode_header(&bytes).unwrap();
        if header.next_page_id == NO_PAGE {
            break;
        }
        walked.push(header.next_page_id);
    }
    assert_eq!(walked, enumerated);
}

#[test]
fn range_enumeration_never_overreads() {
    let rows: Vec<Vec<Value>> = (0..5_000).map(|i| row(i * 2, i)).collect();
    let tree = build(rows, small_config());
    let lsn = tree.current_lsn();

    let range = ScanRange {
        low: Bound::Unbounded,
        high: Bound::Included(vec![Value::Int64(1000)]),
    };
    let got = tree.level1_children_in_range(&range, lsn).unwrap();

    // Oracle: linear scan of the directory.
    let expected: Vec<u64> = tree
        .directory_snapshot()
        .into_iter()
        .filter(|(_, m)| m.level == 0)
        .filter(|(_, m)| range.intersects(m.low.as_deref(), m.high.as_deref()))
        .map(|(id, _)| id)
        .collect();
    assert_eq!(got, expected);
    for id in &got {
        let meta = tree.directory_snapshot().into_iter().find(|(i, _)| i == id).unwrap().1;
        if let Some(low) = meta.low {
            assert!(
                compare_keys(&low, &[Value::Int64(1000)]) != Ordering::Greater,
                "leaf with min key above the bound was enumerated"
            );
        }
    }
}

#[test]
fn point_range_hits_exactly_one_leaf() {
    let rows: Vec<Vec<Value>> = (0..5_000).map(|i| row(i, i)).collect();
    let tree = build(rows, small_config());
    let lsn = tree.current_lsn();
    for k in [0i64, 17, 2500, 4999] {
        let got = tree
            .level1_children_in_range(&ScanRange::point(vec![Value::Int64(k)]), lsn)
            .unwrap();
        assert_eq!(got.len(), 1, "key {k} hit {} leaves", got.len());
    }
}

#[test]
fn update_versions_page_and_logs_undo() {
    let rows: Vec<Vec<Value>> = (1..=10).map(|i| row(i, i * 2)).collect();
    let tree = build(rows, small_config());
    let pre_lsn = tree.current_lsn();

    tree.apply_write(
        100,
        WriteOp::Update { pk: vec![Value::Int64(5)], non_key_values: vec![Value::Int64(7)] },
    )
    .unwrap();

    let rows_now = scan_rows_at(&tree, tree.current_lsn());
    assert!(rows_now.contains(&row(5, 7)));

    // The pre-write version still serves the old value.
    let rows_before = scan_rows_at(&tree, pre_lsn);
    assert!(rows_before.contains(&row(5, 10)));

    let chain = tree.undo().chain(tree.index_id, &[Value::Int64(5)]);
    assert_eq!(chain.len(), 1);
    assert_eq!(chain[0].trx_id, 100);
    let prior = chain[0].prior.as_ref().unwrap();
    assert_eq!(prior.values, row(5, 10));

    // The record carries the writer's trx id now.
    let leaves = tree.level1_children_in_range(&ScanRange::all(), tree.current_lsn()).unwrap();
    let bytes = tree.store().lookup(leaves[0], tree.current_lsn()).unwrap();
    let page = decode_page(&bytes, &tree.schema, None).unwrap();
    let rec = page.iter().find(|r| r.values[0] == Value::Int64(5)).unwrap();
    assert_eq!(rec.trx_id, 100);
}

#[test]
fn delete_marks_but_does_not_remove() {
    let rows: Vec<Vec<Value>> = (1..=10).map(|i| row(i, i)).collect();
    let tree = build(rows, small_config());
    tree.apply_write(100, WriteOp::Delete { pk: vec![Value::Int64(3)] }).unwrap();

    let leaves = tree.level1_children_in_range(&ScanRange::all(), tree.current_lsn()).unwrap();
    let bytes = tree.store().lookup(leaves[0], tree.current_lsn()).unwrap();
    let page = decode_page(&bytes, &tree.schema, None).unwrap();
    let rec = page.iter().find(|r| r.values[0] == Value::Int64(3)).unwrap();
    assert!(rec.delete_mark);
    assert_eq!(rec.trx_id, 100);
    assert_eq!(page.iter().count(), 10, "delete must not remove the record");

    // Deleting again or updating a deleted row fails.
    assert_eq!(
        tree.apply_write(101, WriteOp::Delete { pk: vec![Value::Int64(3)] }),
        Err(BTreeError::KeyNotFound)
    );
}

#[test]
fn writes_of_absent_keys_fail() {
    let tree = build(vec![row(1, 1)], small_config());
    assert_eq!(
        tree.apply_write(
            100,
            WriteOp::Update { pk: vec![Value::Int64(9)], non_key_values: vec![Value::Int64(0)] }
        ),
        Err(BTreeError::KeyNotFound)
    );
    assert_eq!(
        tree.apply_write(100, WriteOp::Insert { values: row(1, 5) }),
        Err(BTreeError::DuplicateKey)
    );
}

#[test]
fn inserts_split_pages_and_old_lsn_sees_old_structure() {
    let rows: Vec<Vec<Value>> = (0..200).map(|i| row(i * 10, i)).collect();
    let tree = build(rows.clone(), BTreeConfig { page_size: 4096, fill_factor: 0.95, slice_size_pages: 8 });
    let pre_lsn = tree.current_lsn();
    let pre_leaves = tree.leaf_count();

    // Dense inserts between existing keys force splits.
    for (txn, i) in (100..).zip(0..400) {
        tree.apply_write(txn, WriteOp::Insert { values: row(i * 10 + 5, i) }).unwrap();
    }
    assert!(tree.leaf_count() > pre_leaves, "expected splits");

    // The old snapshot still scans exactly the original rows.
    assert_eq!(scan_rows_at(&tree, pre_lsn), rows);

    // The new snapshot has everything, still sorted.
    let now = scan_rows_at(&tree, tree.current_lsn());
    assert_eq!(now.len(), rows.len() + 400);
    let keys: Vec<i64> = now
        .iter()
        .map(|r| match r[0] {
            Value::Int64(k) => k,
            _ => unreachable!(),
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(keys, sorted);
}

#[test]
fn version_lookup_matches_write_replay() {
    let rows: Vec<Vec<Value>> = (0..50).map(|i| row(i, 0)).collect();
    let tree = build(rows, small_config());

    // Snapshot page bytes after every write, then re-read each LSN.
    let mut snapshots: Vec<(u64, Vec<Vec<Value>>)> = vec![(tree.current_lsn(), scan_rows_at(&tree, tree.current_lsn()))];
    for i in 0..100u64 {
        let pk = (i % 50) as i64;
        tree.apply_write(
            100 + i,
            WriteOp::Update { pk: vec![Value::Int64(pk)], non_key_values: vec![Value::Int64(i as i64)] },
        )
        .unwrap();
        snapshots.push((tree.current_lsn(), scan_rows_at(&tree, tree.current_lsn())));
    }
    for (lsn, expected) in snapshots {
        assert_eq!(scan_rows_at(&tree, lsn), expected, "replay mismatch at lsn {lsn}");
    }
}

#[test]
fn capture_batch_walks_the_range_in_chunks() {
    let rows: Vec<Vec<Value>> = (0..5_000).map(|i| row(i, i)).collect();
    let tree = build(rows, small_config());
    let all = tree.leaf_ids_in_order();

    let mut position: Option<Vec<Value>> = None;
    let mut seen = Vec::new();
    loop {
        let batch = tree.capture_batch(&ScanRange::all(), position.as_deref(), 4).unwrap();
        seen.extend(batch.leaf_ids.iter().copied());
        match batch.next_position {
            Some(p) => position = Some(p),
            None => break,
        }
    }
    assert_eq!(seen, all);
}

#[test]
fn undersized_pages_are_rejected() {
    let err = BTree::bulk_load(
        vec![row(1, 1)],
        schema(),
        BTreeConfig { page_size: 1024, fill_factor: 0.9, slice_size_pages: 8 },
        Arc::new(PageVersionStore::new()),
        Arc::new(UndoLog::new()),
    )
    .unwrap_err();
    assert_eq!(err, BTreeError::PageSizeTooSmall(1024));
}
