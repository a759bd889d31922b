//! Plan post-processing: per table access, decide which pushdowns to
//! enable without touching plan enumeration.
//!
//! A finalized access is examined after planning: predicates split into a
//! pushable set (everything the storage-side allowlist can run) and a
//! residual set for the executor; projection is pushed when it saves
//! enough width; aggregation is pushed only for the last (here: only)
//! table of a block with an empty residual set and index-prefix grouping.
//! Pushdown is skipped outright for accesses estimated to read too few
//! pages to pay for it. Splitting predicate ranges out never removes a
//! conjunct: a primary-key range prunes pages, but the conjunct itself
//! still travels as a predicate, which is what keeps aggregate folding of
//! edge leaves correct on the storage side.

use crate::config::PlannerConfig;
use crate::predicate::{compile, PredExpr};
use crate::schema::Schema;
use serde::{Deserialize, Serialize};

/// Table statistics the planner consults. Column widths are averages in
/// bytes; resident page count comes from the buffer pool at plan time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableStats {
    pub row_count: u64,
    pub avg_row_bytes: f64,
    pub col_avg_width: Vec<f64>,
    pub resident_pages: u64,
}

impl TableStats {
    pub fn full_width(&self) -> f64 {
        self.col_avg_width.iter().sum()
    }
}

/// The finalized access path, as far as pushdown cares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccessPath {
    FullScan,
    /// A range scan covering roughly this fraction of the key space.
    RangeScan { fraction: f64 },
    PointLookup,
}

#[derive(Debug, Clone, Default)]
pub struct NdpPlanFlags {
    pub project: bool,
    pub filter: bool,
    pub aggregate: bool,
    pub pushed_predicates: Vec<PredExpr>,
    pub residual_predicates: Vec<PredExpr>,
    pub explain: Vec<String>,
}

impl NdpPlanFlags {
    pub fn any(&self) -> bool {
        self.project || self.filter || self.aggregate
    }
}

/// What the query wants from the table, gathered by the frontend.
#[derive(Debug, Clone)]
pub struct AccessSpec {
    pub path: AccessPath,
    /// WHERE clause, if any.
    pub where_expr: Option<PredExpr>,
    /// Schema columns the select list needs.
    pub select_columns: Vec<usize>,
    /// Aggregation shape, when the query aggregates.
    pub aggregation: Option<AccessAggregation>,
    /// Whether this is the last (only) table access of the block.
    pub last_table_in_block: bool,
}

#[derive(Debug, Clone)]
pub struct AccessAggregation {
    pub group_by: Vec<usize>,
    /// Columns feeding aggregate functions.
    pub input_columns: Vec<usize>,
}

/// Flattens a WHERE tree into top-level conjuncts.
pub fn conjuncts(expr: &PredExpr) -> Vec<PredExpr> {
    match expr {
        PredExpr::And(l, r) => {
            let mut out = conjuncts(l);
            out.extend(conjuncts(r));
            out
        }
        other => vec![other.clone()],
    }
}

/// Splits a WHERE clause into pushable and residual conjuncts. A conjunct
/// is pushable iff the storage-side bytecode can express it, which the
/// compiler decides (allowlisted operators and types, columns of this
/// table only, literals in range). Disjunctions are all-or-nothing: one
/// unsupported leaf keeps the whole conjunct residual. The conjunction of
/// both sets is the original clause.
pub fn split_predicates(
    where_expr: Option<&PredExpr>,
    schema: &Schema,
) -> (Vec<PredExpr>, Vec<PredExpr>) {
    let mut pushable = Vec::new();
    let mut residual = Vec::new();
    if let Some(expr) = where_expr {
        for conjunct in conjuncts(expr) {
            if compile(&conjunct, schema).is_ok() {
                pushable.push(conjunct);
            } else {
                residual.push(conjunct);
            }
        }
    }
    (pushable, residual)
}

/// Pages an access will read: table pages scaled by the scanned fraction
/// of the key space, minus what is already resident. Selectivity of
/// non-key predicates does not reduce page reads.
pub fn estimate_io_pages(
    stats: &TableStats,
    range_fraction: f64,
    page_size: usize,
    fill_factor: f64,
) -> u64 {
    let bytes = stats.row_count as f64 * stats.avg_row_bytes;
    let capacity = page_size as f64 * fill_factor;
    let total = (bytes / capacity).ceil() * range_fraction.clamp(0.0, 1.0);
    (total.ceil() as u64).saturating_sub(stats.resident_pages)
}

/// Heuristic filter factor of one conjunct: equality-style predicates are
/// assumed more selective than ranges. Placeholders, exposed in config;
/// no histogram machinery stands behind them.
pub fn filter_factor(expr: &PredExpr, config: &PlannerConfig) -> f64 {
    match expr {
        PredExpr::Compare(op, _, _) => match op {
            crate::predicate::CmpOp::Eq => config.ff_equality,
            crate::predicate::CmpOp::Ne => 1.0 - config.ff_equality,
            _ => config.ff_range,
        },
        PredExpr::And(l, r) => filter_factor(l, config) * filter_factor(r, config),
        PredExpr::Or(l, r) => (filter_factor(l, config) + filter_factor(r, config)).min(1.0),
        PredExpr::Not(e) => 1.0 - filter_factor(e, config),
        PredExpr::IsNull(_) => config.ff_equality,
        _ => 1.0,
    }
}

/// Every schema column the query needs carried through a projection: the
/// select list, all predicate inputs (pushed or residual), grouping and
/// aggregation inputs, and always the key prefix. Sorted ascending, which
/// is also the descriptor's canonical projection order.
pub fn required_columns(access: &AccessSpec, schema: &Schema) -> Vec<usize> {
    let mut required: Vec<usize> = access.select_columns.clone();
    if let Some(expr) = &access.where_expr {
        expr.referenced_columns(&mut required);
    }
    if let Some(agg) = &access.aggregation {
        required.extend(agg.group_by.iter().copied());
        required.extend(agg.input_columns.iter().copied());
    }
    for pk in schema.pk_indices() {
        required.push(pk);
    }
    required.sort_unstable();
    required.dedup();
    required
}

/// The decision procedure. Any enabled flag marks the access as a
/// pushdown scan; EXPLAIN lines mirror what the executor will do.
pub fn decide_ndp(
    access: &AccessSpec,
    stats: &TableStats,
    schema: &Schema,
    page_size: usize,
    fill_factor: f64,
    config: &PlannerConfig,
) -> NdpPlanFlags {
    let (pushable, residual) = split_predicates(access.where_expr.as_ref(), schema);

    let mut flags = NdpPlanFlags {
        pushed_predicates: Vec::new(),
        residual_predicates: Vec::new(),
        ..Default::default()
    };

    let fraction = match access.path {
        AccessPath::FullScan => 1.0,
        AccessPath::RangeScan { fraction } => fraction,
        AccessPath::PointLookup => {
            // Accesses touching a few rows never qualify.
            flags.residual_predicates = [pushable, residual].concat();
            return flags;
        }
    };
    let estimated = estimate_io_pages(stats, fraction, page_size, fill_factor);
    if estimated < config.ndp_min_io_pages {
        flags.residual_predicates = [pushable, residual].concat();
        flags.explain.push(format!(
            "NDP not considered (estimated {estimated} I/O pages, threshold {})",
            config.ndp_min_io_pages
        ));
        return flags;
    }

    // Projection: push when the required width saves enough.
    let required = required_columns(access, schema);
    let projected_width: f64 = required.iter().map(|&c| stats.col_avg_width[c]).sum();
    let full_width = stats.full_width();
    if full_width > 0.0 && projected_width <= (1.0 - config.min_width_reduction) * full_width {
        flags.project = true;
    }

    // Filtering: push when the pushable set is selective enough.
    if !pushable.is_empty() {
        let ff: f64 = pushable.iter().map(|c| filter_factor(c, config)).product();
        if ff <= config.max_pushdown_ff {
            flags.filter = true;
        }
    }
    if flags.filter {
        flags.pushed_predicates = pushable;
        flags.residual_predicates = residual;
    } else {
        flags.residual_predicates = [pushable, residual].concat();
    }

    // Aggregation: last table of the block, nothing residual, grouping on
    // an index prefix.
    if let Some(agg) = &access.aggregation {
        let group_is_prefix =
            agg.group_by.iter().enumerate().all(|(i, &c)| c == i) && agg.group_by.len() <= schema.pk_prefix_len;
        if access.last_table_in_block && flags.residual_predicates.is_empty() && group_is_prefix {
            flags.aggregate = true;
        }
    }
    debug_assert!(
        !flags.aggregate || flags.residual_predicates.is_empty(),
        "aggregate pushdown with residual predicates"
    );

    if flags.filter {
        let rendered: Vec<String> =
            flags.pushed_predicates.iter().map(|p| p.render(schema)).collect();
        flags.explain.push(format!("Using pushed NDP condition ({})", rendered.join(" AND ")));
    }
    if flags.project {
        flags.explain.push("Using pushed NDP columns".to_string());
    }
    if flags.aggregate {
        flags.explain.push("Using pushed NDP aggregate".to_string());
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::CmpOp;
    use crate::value::{ColumnType as Ct, TypeTag as T, Value};

    fn schema() -> Schema {
        Schema::new(
            "worker",
            vec![
                ("id", Ct::new(T::Int64)),
                ("age", Ct::new(T::Int64)),
                ("join_date", Ct::new(T::Date)),
                ("salary", Ct::new(T::Decimal { precision: 12, scale: 2 })),
                ("name", Ct::new(T::Varchar { max_len: 40 })),
            ],
            1,
            1,
        )
        .unwrap()
    }

    fn stats(rows: u64, resident: u64) -> TableStats {
        TableStats {
            row_count: rows,
            avg_row_bytes: 80.0,
            col_avg_width: vec![8.0, 8.0, 4.0, 8.0, 52.0],
            resident_pages: resident,
        }
    }

    fn col(i: usize) -> PredExpr {
        PredExpr::ColumnRef(i)
    }

    fn age_pred() -> PredExpr {
        PredExpr::cmp(CmpOp::Lt, col(1), PredExpr::Literal(Value::Int64(40)))
    }

    fn date_preds() -> PredExpr {
        PredExpr::and(
            PredExpr::cmp(CmpOp::Ge, col(2), PredExpr::Literal(Value::Date(14610))),
            PredExpr::cmp(CmpOp::Lt, col(2), PredExpr::Literal(Value::Date(14975))),
        )
    }

    fn avg_salary_access(where_expr: Option<PredExpr>) -> AccessSpec {
        AccessSpec {
            path: AccessPath::FullScan,
            where_expr,
            select_columns: vec![],
            aggregation: Some(AccessAggregation { group_by: vec![], input_columns: vec![3] }),
            last_table_in_block: true,
        }
    }

    #[test]
    fn fully_pushable_where_clause_leaves_no_residual() {
        let s = schema();
        let expr = PredExpr::and(age_pred(), date_preds());
        let (pushed, residual) = split_predicates(Some(&expr), &s);
        assert_eq!(pushed.len(), 3);
        assert!(residual.is_empty());
    }

    #[test]
    fn udf_conjunct_goes_residual() {
        let s = schema();
        let expr = PredExpr::and(
            age_pred(),
            PredExpr::cmp(
                CmpOp::Eq,
                PredExpr::Literal(Value::Int64(1)),
                PredExpr::Literal(Value::Int64(1)),
            ),
        );
        // Replace the second conjunct with a UDF call comparison.
        let expr = match expr {
            PredExpr::And(l, _) => PredExpr::and(
                *l,
                PredExpr::Call { name: "udf".into(), args: vec![col(4)] },
            ),
            _ => unreachable!(),
        };
        let (pushed, residual) = split_predicates(Some(&expr), &s);
        assert_eq!(pushed, vec![age_pred()]);
        assert_eq!(residual.len(), 1);
        assert!(matches!(residual[0], PredExpr::Call { .. }));
    }

    #[test]
    fn split_preserves_semantics_on_random_rows() {
        use crate::record::RowView;
        let s = schema();
        let mut rng = crate::util::XorShift64::new(11);
        for _ in 0..200 {
            // Random conjunction of pushable and unsupported conjuncts.
            let mut parts: Vec<PredExpr> = Vec::new();
            for _ in 0..1 + rng.next_range(4) {
                let p = if rng.next_range(3) == 0 {
                    PredExpr::Call { name: "udf".into(), args: vec![] }
                } else {
                    PredExpr::cmp(
                        CmpOp::Gt,
                        col(1),
                        PredExpr::Literal(Value::Int64(rng.next_range(100) as i64)),
                    )
                };
                parts.push(p);
            }
            let expr = parts.clone().into_iter().reduce(PredExpr::and).unwrap();
            let (pushed, residual) = split_predicates(Some(&expr), &s);
            assert_eq!(pushed.len() + residual.len(), parts.len());

            // On rows where the original evaluates (no UDFs), the split
            // conjunction agrees.
            if !parts.iter().any(|p| matches!(p, PredExpr::Call { .. })) {
                let row = vec![
                    Value::Int64(1),
                    Value::Int64(rng.next_range(100) as i64),
                    Value::Date(0),
                    Value::Decimal(0),
                    Value::Varchar(vec![]),
                ];
                let view = RowView::full(&s, &row);
                let original = crate::predicate::interpret(&expr, &view).unwrap();
                let both = pushed
                    .iter()
                    .chain(residual.iter())
                    .map(|c| crate::predicate::interpret(c, &view).unwrap())
                    .fold(crate::predicate::Ternary::True, |a, b| a.and(b));
                assert_eq!(original, both);
            }
        }
    }

    #[test]
    fn io_estimate_subtracts_residency() {
        // A scan estimated at 14000 pages with 5000 resident reads 9000.
        let stats = TableStats {
            row_count: 1_400_000,
            avg_row_bytes: 163.84,
            col_avg_width: vec![163.84],
            resident_pages: 5_000,
        };
        assert_eq!(estimate_io_pages(&stats, 1.0, 16384, 1.0), 9_000);

        // Fully resident floors at zero.
        let stats = TableStats { resident_pages: 1_000_000, ..stats };
        assert_eq!(estimate_io_pages(&stats, 1.0, 16384, 1.0), 0);
    }

    #[test]
    fn all_three_pushdowns_for_a_large_cold_aggregate_scan() {
        let s = schema();
        let access = avg_salary_access(Some(PredExpr::and(age_pred(), date_preds())));
        let flags = decide_ndp(&access, &stats(1_000_000, 0), &s, 16384, 0.9, &PlannerConfig::default());
        assert!(flags.project && flags.filter && flags.aggregate, "{flags:?}");
        assert!(flags.residual_predicates.is_empty());
        assert_eq!(flags.explain.len(), 3);
        assert!(flags.explain[0].starts_with("Using pushed NDP condition ("));
        assert_eq!(flags.explain[1], "Using pushed NDP columns");
        assert_eq!(flags.explain[2], "Using pushed NDP aggregate");
    }

    #[test]
    fn small_resident_tables_get_nothing() {
        let s = schema();
        let access = avg_salary_access(Some(age_pred()));
        let small = TableStats { row_count: 100, ..stats(100, 0) };
        let flags = decide_ndp(&access, &small, &s, 16384, 0.9, &PlannerConfig::default());
        assert!(!flags.any());
        // The would-be pushed predicates became residual.
        assert_eq!(flags.residual_predicates.len(), 1);
    }

    #[test]
    fn projection_only_when_few_columns_are_needed() {
        let s = schema();
        let access = AccessSpec {
            path: AccessPath::FullScan,
            where_expr: None,
            select_columns: vec![0, 1],
            aggregation: None,
            last_table_in_block: true,
        };
        let flags = decide_ndp(&access, &stats(1_000_000, 0), &s, 16384, 0.9, &PlannerConfig::default());
        assert!(flags.project);
        assert!(!flags.filter && !flags.aggregate);
        assert_eq!(flags.explain, vec!["Using pushed NDP columns".to_string()]);
    }

    #[test]
    fn point_lookups_are_excluded() {
        let s = schema();
        let access = AccessSpec {
            path: AccessPath::PointLookup,
            where_expr: Some(age_pred()),
            select_columns: vec![0],
            aggregation: None,
            last_table_in_block: true,
        };
        let flags = decide_ndp(&access, &stats(1_000_000, 0), &s, 16384, 0.9, &PlannerConfig::default());
        assert!(!flags.any());
    }

    #[test]
    fn residual_predicates_block_aggregate_pushdown() {
        let s = schema();
        let mut access = avg_salary_access(Some(PredExpr::and(
            age_pred(),
            PredExpr::Call { name: "udf".into(), args: vec![] },
        )));
        access.select_columns = vec![];
        let flags = decide_ndp(&access, &stats(1_000_000, 0), &s, 16384, 0.9, &PlannerConfig::default());
        assert!(!flags.aggregate);
        assert!(flags.filter, "the pushable part still pushes");
        assert_eq!(flags.residual_predicates.len(), 1);
    }

    #[test]
    fn grouping_must_be_an_index_prefix() {
        let s = schema();
        let mut access = avg_salary_access(None);
        access.aggregation =
            Some(AccessAggregation { group_by: vec![1], input_columns: vec![3] });
        let flags = decide_ndp(&access, &stats(1_000_000, 0), &s, 16384, 0.9, &PlannerConfig::default());
        assert!(!flags.aggregate, "grouping by a non-key column cannot push");
    }

    #[test]
    fn raising_the_gate_never_enables_flags() {
        let s = schema();
        let access = avg_salary_access(Some(age_pred()));
        let st = stats(1_000_000, 0);
        let mut last_any = true;
        for gate in [1u64, 64, 1 << 12, 1 << 16, 1 << 62] {
            let config = PlannerConfig { ndp_min_io_pages: gate, ..Default::default() };
            let flags = decide_ndp(&access, &st, &s, 16384, 0.9, &config);
            assert!(
                !flags.any() || last_any,
                "raising the gate turned a flag back on at {gate}"
            );
            last_any = flags.any();
        }
    }
}
