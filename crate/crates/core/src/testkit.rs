//! Reference implementations for tests.
//!
//! Everything here recomputes results by the most direct route available —
//! materialize rows, filter with the tree interpreter, aggregate with
//! plain maps — deliberately sharing nothing with the batch/pushdown
//! execution path it is used to check. Production code must never call
//! into this module.

use crate::btree::BTree;
use crate::compute::{AggOutput, OutputAgg};
use crate::mvcc::ReadView;
use crate::predicate::{interpret, PredExpr, Ternary};
use crate::record::{Record, RowView};
use crate::schema::Schema;
use crate::value::{compare_keys, Value};

/// Materializes every row visible under `view` by walking leaves in key
/// order at the tree's current LSN, resolving versions through the undo
/// log with its own chain walk.
pub fn visible_rows(tree: &BTree, view: &ReadView) -> Vec<Vec<Value>> {
    let lsn = tree.current_lsn();
    let mut rows = Vec::new();
    for leaf in tree.leaf_ids_in_order() {
        let bytes = tree.store().lookup(leaf, lsn).expect("leaf readable");
        let page = crate::page::decode_page(&bytes, &tree.schema, None).expect("leaf decodes");
        for record in page.iter() {
            if let Some(values) = resolve_reference(record, tree, view) {
                rows.push(values);
            }
        }
    }
    rows
}

/// Independent version resolution: walk the undo chain from the newest
/// entry downward until a visible version appears.
fn resolve_reference(record: &Record, tree: &BTree, view: &ReadView) -> Option<Vec<Value>> {
    let mut current: Record = record.clone();
    loop {
        if view.is_visible(current.trx_id) {
            if current.delete_mark {
                return None;
            }
            return Some(current.values.clone());
        }
        let chain = tree.undo().chain(tree.index_id, record.key(&tree.schema));
        let entry = chain.iter().find(|e| e.trx_id == current.trx_id)?;
        current = entry.prior.clone()?;
    }
}

/// A query over materialized rows, mirroring the executor's semantics.
pub struct ReferenceQuery<'a> {
    pub schema: &'a Schema,
    pub where_expr: Option<&'a PredExpr>,
    /// Non-aggregating output columns, or aggregation outputs.
    pub select: ReferenceSelect,
    pub range: Option<&'a crate::btree::ScanRange>,
}

pub enum ReferenceSelect {
    Columns(Vec<usize>),
    Aggregate { group_by: Vec<usize>, outputs: Vec<AggOutput> },
}

/// Runs the query by brute force. Rows must be in key order already (as
/// `visible_rows` returns them).
pub fn run_reference(query: &ReferenceQuery, rows: &[Vec<Value>]) -> Vec<Vec<Value>> {
    let filtered: Vec<&Vec<Value>> = rows
        .iter()
        .filter(|row| {
            if let Some(range) = query.range {
                if !range.contains(&row[..query.schema.pk_prefix_len]) {
                    return false;
                }
            }
            match query.where_expr {
                None => true,
                Some(expr) => {
                    let view = RowView::full(query.schema, row);
                    interpret(expr, &view).expect("reference predicate evaluates") == Ternary::True
                }
            }
        })
        .collect();

    match &query.select {
        ReferenceSelect::Columns(cols) => filtered
            .iter()
            .map(|row| cols.iter().map(|&c| row[c].clone()).collect())
            .collect(),
        ReferenceSelect::Aggregate { group_by, outputs } => {
            // Contiguous grouping over key-ordered input.
            let mut result: Vec<Vec<Value>> = Vec::new();
            let mut groups: Vec<(Vec<Value>, Vec<&Vec<Value>>)> = Vec::new();
            for row in &filtered {
                let key: Vec<Value> = group_by.iter().map(|&c| row[c].clone()).collect();
                match groups.last_mut() {
                    Some((k, members)) if *k == key => members.push(row),
                    _ => groups.push((key, vec![row])),
                }
            }
            if group_by.is_empty() && groups.is_empty() {
                groups.push((Vec::new(), Vec::new()));
            }
            for (key, members) in groups {
                let mut out_row = Vec::with_capacity(outputs.len());
                for out in outputs {
                    out_row.push(match out {
                        AggOutput::GroupCol(c) => {
                            let pos = group_by.iter().position(|g| g == c).unwrap();
                            key[pos].clone()
                        }
                        AggOutput::Agg(agg) => reference_aggregate(*agg, &members),
                    });
                }
                result.push(out_row);
            }
            result
        }
    }
}

fn reference_aggregate(agg: OutputAgg, rows: &[&Vec<Value>]) -> Value {
    let non_null = |c: usize| rows.iter().map(move |r| &r[c]).filter(|v| !v.is_null());
    match agg {
        OutputAgg::CountStar => Value::Int64(rows.len() as i64),
        OutputAgg::CountCol(c) => Value::Int64(non_null(c).count() as i64),
        OutputAgg::Sum(c) => {
            let mut any = false;
            let mut sum: i128 = 0;
            let mut decimal = false;
            for v in non_null(c) {
                any = true;
                decimal = matches!(v, Value::Decimal(_));
                sum += v.as_i128().expect("summable");
            }
            if !any {
                Value::Null
            } else if decimal {
                Value::Decimal(sum as i64)
            } else {
                Value::Int64(sum as i64)
            }
        }
        OutputAgg::Min(c) => non_null(c)
            .min_by(|a, b| a.cmp_same_type(b))
            .cloned()
            .unwrap_or(Value::Null),
        OutputAgg::Max(c) => non_null(c)
            .max_by(|a, b| a.cmp_same_type(b))
            .cloned()
            .unwrap_or(Value::Null),
        OutputAgg::Avg(c) => {
            let mut count: i128 = 0;
            let mut sum: i128 = 0;
            for v in non_null(c) {
                count += 1;
                sum += v.as_i128().expect("summable");
            }
            if count == 0 {
                Value::Null
            } else {
                Value::Decimal((sum * 10_000 / count) as i64)
            }
        }
    }
}

/// Asserts rows ascend strictly by the leading `pk_len` columns.
pub fn assert_ascending_by_key(rows: &[Vec<Value>], pk_len: usize) {
    for pair in rows.windows(2) {
        assert_eq!(
            compare_keys(&pair[0][..pk_len.min(pair[0].len())], &pair[1][..pk_len.min(pair[1].len())]),
            std::cmp::Ordering::Less,
            "rows out of key order: {:?} then {:?}",
            pair[0],
            pair[1]
        );
    }
}

/// Random predicate and row generation for differential testing of the
/// bytecode against the interpreter.
pub mod predgen {
    use crate::predicate::{CmpOp, PredExpr};
    use crate::schema::Schema;
    use crate::util::XorShift64;
    use crate::value::{ColumnType as Ct, TypeTag as T, Value};

    /// Five columns covering every type, most nullable.
    pub fn fuzz_schema() -> Schema {
        Schema::new(
            "f",
            vec![
                ("a", Ct::new(T::Int64)),
                ("b", Ct::nullable(T::Int64)),
                ("c", Ct::nullable(T::Decimal { precision: 12, scale: 2 })),
                ("d", Ct::nullable(T::Date)),
                ("e", Ct::nullable(T::Varchar { max_len: 8 })),
            ],
            1,
            1,
        )
        .unwrap()
    }

    pub fn random_cmp_op(rng: &mut XorShift64) -> CmpOp {
        match rng.next_range(6) {
            0 => CmpOp::Lt,
            1 => CmpOp::Le,
            2 => CmpOp::Gt,
            3 => CmpOp::Ge,
            4 => CmpOp::Eq,
            _ => CmpOp::Ne,
        }
    }

    pub fn random_literal(rng: &mut XorShift64, col: usize) -> Value {
        if rng.next_range(8) == 0 {
            return Value::Null;
        }
        match col {
            0 | 1 => Value::Int64(rng.next_range(20) as i64 - 10),
            2 => Value::Decimal(rng.next_range(2000) as i64 - 1000),
            3 => Value::Date(rng.next_range(100) as i32 - 50),
            _ => {
                let len = rng.next_range(4) as usize;
                Value::Varchar((0..len).map(|_| b'a' + (rng.next_range(3) as u8)).collect())
            }
        }
    }

    fn random_compare(rng: &mut XorShift64) -> PredExpr {
        let col = rng.next_range(5) as usize;
        let op = random_cmp_op(rng);
        let lit = PredExpr::Literal(random_literal(rng, col));
        // Occasionally column-column comparisons of matching type.
        if col <= 1 && rng.next_range(5) == 0 {
            let other = rng.next_range(2) as usize;
            return PredExpr::cmp(op, PredExpr::ColumnRef(col), PredExpr::ColumnRef(other));
        }
        if rng.next_range(2) == 0 {
            PredExpr::cmp(op, PredExpr::ColumnRef(col), lit)
        } else {
            PredExpr::cmp(op, lit, PredExpr::ColumnRef(col))
        }
    }

    pub fn random_expr(rng: &mut XorShift64, depth: usize) -> PredExpr {
        if depth == 0 || rng.next_range(3) == 0 {
            return match rng.next_range(8) {
                0 => PredExpr::is_null(PredExpr::ColumnRef(rng.next_range(5) as usize)),
                _ => random_compare(rng),
            };
        }
        match rng.next_range(4) {
            0 => PredExpr::and(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            1 => PredExpr::or(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            2 => PredExpr::not(random_expr(rng, depth - 1)),
            _ => random_compare(rng),
        }
    }

    /// A row for `fuzz_schema`, with NULLs in nullable columns.
    pub fn random_row(rng: &mut XorShift64) -> Vec<Value> {
        let mut row = vec![Value::Int64(rng.next_range(20) as i64 - 10)];
        for col in 1..5 {
            if rng.next_range(4) == 0 {
                row.push(Value::Null);
            } else {
                row.push(random_literal(rng, col));
            }
        }
        if row[0].is_null() {
            row[0] = Value::Int64(0);
        }
        row
    }
}
