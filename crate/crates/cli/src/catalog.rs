//! Table ingestion and on-disk layout.
//!
//! A loaded table is a directory of slice files plus a manifest:
//!
//! ```text
//! <slices>/manifest.json      schema, tree geometry, stats
//! <slices>/slice_<id>.pages   length-prefixed versioned pages
//! ```
//!
//! CSV rows need not be sorted; loading sorts by primary key before the
//! bulk build. Page stores only ever read the slice files; the manifest is
//! compute-side catalog state.

use anyhow::{bail, Context, Result};
use ndp_core::btree::{BTree, BTreeConfig, PageVersionStore, UndoLog};
use ndp_core::planner::TableStats;
use ndp_core::schema::Schema;
use ndp_core::value::{compare_keys, parse_date, parse_decimal, TypeTag, Value};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: Schema,
    pub page_size: usize,
    pub fill_factor: f64,
    pub slice_size_pages: u64,
    pub root_page_id: u64,
    pub current_lsn: u64,
    pub next_page_id: u64,
    pub row_count: u64,
    pub stats: TableStats,
}

/// Parses one CSV field against a column type. Empty fields are NULL for
/// nullable columns.
pub fn parse_field(text: &str, tag: &TypeTag, nullable: bool) -> Result<Value> {
    if text.is_empty() && nullable {
        return Ok(Value::Null);
    }
    Ok(match tag {
        TypeTag::Int64 => Value::Int64(text.parse::<i64>().context("integer field")?),
        TypeTag::Decimal { precision, scale } => {
            Value::Decimal(parse_decimal(text, *precision, *scale)?)
        }
        TypeTag::Date => Value::Date(parse_date(text)?),
        TypeTag::Varchar { max_len } => {
            if text.len() > *max_len as usize {
                bail!("varchar value of {} bytes exceeds max {max_len}", text.len());
            }
            Value::Varchar(text.as_bytes().to_vec())
        }
    })
}

/// Reads a CSV (no header) into typed rows, reporting line numbers on
/// parse errors.
pub fn read_csv(path: &Path, schema: &Schema) -> Result<Vec<Vec<Value>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("open {}", path.display()))?;
    let mut rows = Vec::new();
    for (ix, record) in reader.records().enumerate() {
        let line = ix + 1;
        let record = record.with_context(|| format!("line {line}"))?;
        if record.len() != schema.column_count() {
            bail!(
                "line {line}: {} fields, schema has {} columns",
                record.len(),
                schema.column_count()
            );
        }
        let mut row = Vec::with_capacity(schema.column_count());
        for (col, field) in schema.columns.iter().zip(record.iter()) {
            row.push(
                parse_field(field, &col.ty.tag, col.ty.nullable)
                    .with_context(|| format!("line {line}, column {:?}", col.name))?,
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Computes table statistics from the loaded rows; residency starts at 0.
pub fn compute_stats(schema: &Schema, rows: &[Vec<Value>]) -> TableStats {
    let n = rows.len().max(1) as f64;
    let mut widths = vec![0f64; schema.column_count()];
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            widths[i] += match v {
                Value::Null => 0.0,
                Value::Int64(_) | Value::Decimal(_) => 8.0,
                Value::Date(_) => 4.0,
                Value::Varchar(b) => 2.0 + b.len() as f64,
            };
        }
    }
    for w in &mut widths {
        *w /= n;
    }
    TableStats {
        row_count: rows.len() as u64,
        avg_row_bytes: widths.iter().sum::<f64>().max(1.0),
        col_avg_width: widths,
        resident_pages: 0,
    }
}

/// Builds the tree from unsorted rows and persists slices plus manifest.
pub fn load_table(
    schema: Schema,
    mut rows: Vec<Vec<Value>>,
    config: BTreeConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    rows.sort_by(|a, b| {
        compare_keys(&a[..schema.pk_prefix_len], &b[..schema.pk_prefix_len])
    });
    let stats = compute_stats(&schema, &rows);
    let store = Arc::new(PageVersionStore::new());
    let undo = Arc::new(UndoLog::new());
    let row_count = rows.len() as u64;
    let tree = BTree::bulk_load(rows, schema.clone(), config.clone(), store, undo)
        .context("building the clustered index")?;

    std::fs::create_dir_all(out_dir)?;
    for slice in tree.slice_ids() {
        let pages = tree.pages_in_slice(slice);
        tree.store()
            .write_slice_file(&out_dir.join(format!("slice_{slice}.pages")), &pages)
            .with_context(|| format!("writing slice {slice}"))?;
    }
    let manifest = Manifest {
        schema,
        page_size: config.page_size,
        fill_factor: config.fill_factor,
        slice_size_pages: config.slice_size_pages,
        root_page_id: tree.root_page_id(),
        current_lsn: tree.current_lsn(),
        next_page_id: tree.next_page_id(),
        row_count,
        stats,
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Slice ids present in a slice directory, from the file names.
pub fn slice_ids_in_dir(dir: &Path) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_prefix("slice_").and_then(|s| s.strip_suffix(".pages")) {
            ids.push(id.parse::<u32>().with_context(|| format!("slice file {name}"))?);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// Loads slice files into a fresh store, returning the page-to-slice map.
pub fn load_slices(dir: &Path, store: &PageVersionStore) -> Result<HashMap<u64, u32>> {
    let mut page_to_slice = HashMap::new();
    for slice in slice_ids_in_dir(dir)? {
        let path = dir.join(format!("slice_{slice}.pages"));
        let before: std::collections::HashSet<u64> = store.page_ids().into_iter().collect();
        store.load_slice_file(&path).with_context(|| format!("loading {}", path.display()))?;
        for page in store.page_ids() {
            if !before.contains(&page) {
                page_to_slice.insert(page, slice);
            }
        }
    }
    Ok(page_to_slice)
}

/// Opens a persisted table: reads the manifest, loads every slice file,
/// and rebuilds the tree structure.
pub fn open_table(dir: &Path) -> Result<(Manifest, Arc<BTree>, HashMap<u64, u32>)> {
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)
            .context("reading manifest.json")?;
    let store = Arc::new(PageVersionStore::new());
    let page_to_slice = load_slices(dir, &store)?;
    let tree = BTree::open(
        manifest.schema.clone(),
        BTreeConfig {
            page_size: manifest.page_size,
            fill_factor: manifest.fill_factor,
            slice_size_pages: manifest.slice_size_pages,
        },
        store,
        Arc::new(UndoLog::new()),
        manifest.root_page_id,
        manifest.current_lsn,
        manifest.next_page_id,
        &page_to_slice,
    )?;
    Ok((manifest, Arc::new(tree), page_to_slice))
}
