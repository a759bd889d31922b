//! Query execution: parse, bind, plan, build the pushdown descriptor, run
//! the scan (serial or parallel), and report rows plus metrics.

use crate::cluster::Cluster;
use crate::sqlparse::{self, AggName, ParsedQuery, SelectItem, SqlError};
use anyhow::{anyhow, bail, Result};
use ndp_core::btree::ScanRange;
use ndp_core::compute::{
    pq_execute, AggOutput, AggPlan, NdpScanCursor, OutputAgg, ScanOutput, ScanSpec,
};
use ndp_core::descriptor::{AggSpec, NdpDescriptor};
use ndp_core::metrics::QueryMetrics;
use ndp_core::planner::{
    conjuncts, decide_ndp, required_columns, AccessAggregation, AccessPath, AccessSpec,
};
use ndp_core::predicate::{compile, CmpOp, PredExpr};
use ndp_core::value::{compare_keys, TypeTag, Value};
use std::cmp::Ordering;
use std::ops::Bound;
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub struct QueryFlags {
    /// User override: `--ndp off` disables pushdown requests entirely.
    pub ndp_enabled: bool,
    pub dop: usize,
    pub explain: bool,
}

impl Default for QueryFlags {
    fn default() -> Self {
        QueryFlags { ndp_enabled: true, dop: 1, explain: false }
    }
}

#[derive(Debug)]
pub struct QueryOutcome {
    pub columns: Vec<String>,
    pub types: Vec<TypeTag>,
    pub rows: Vec<Vec<Value>>,
    pub metrics: QueryMetrics,
    pub explain: Vec<String>,
}

enum Shape {
    Columns(Vec<usize>),
    Aggregate { group_by: Vec<usize>, outputs: Vec<AggOutput>, input_columns: Vec<usize> },
}

fn bind_select(q: &ParsedQuery, schema: &ndp_core::schema::Schema) -> Result<(Shape, Vec<String>)> {
    let has_agg = q.select.iter().any(|s| matches!(s, SelectItem::Agg { .. }));
    let col =
        |name: &str| schema.column_index(name).map_err(|_| SqlError::UnknownColumn(name.into()));

    if !has_agg && q.group_by.is_empty() {
        let mut cols = Vec::new();
        let mut names = Vec::new();
        for item in &q.select {
            match item {
                SelectItem::Star => {
                    for (i, c) in schema.columns.iter().enumerate() {
                        cols.push(i);
                        names.push(c.name.clone());
                    }
                }
                SelectItem::Column(name) => {
                    cols.push(col(name)?);
                    names.push(name.clone());
                }
                SelectItem::Agg { .. } => unreachable!(),
            }
        }
        return Ok((Shape::Columns(cols), names));
    }

    let group_by: Vec<usize> =
        q.group_by.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let mut outputs = Vec::new();
    let mut input_columns = Vec::new();
    let mut names = Vec::new();
    for item in &q.select {
        match item {
            SelectItem::Star => {
                bail!("SELECT * cannot be combined with aggregation; {}", sqlparse::SUBSET_HELP)
            }
            SelectItem::Column(name) => {
                let ix = col(name)?;
                if !group_by.contains(&ix) {
                    bail!("column {name:?} must appear in GROUP BY");
                }
                outputs.push(AggOutput::GroupCol(ix));
                names.push(name.clone());
            }
            SelectItem::Agg { func, arg } => {
                let agg = match (func, arg) {
                    (AggName::Count, None) => OutputAgg::CountStar,
                    (AggName::Count, Some(c)) => OutputAgg::CountCol(col(c)?),
                    (AggName::Sum, Some(c)) => OutputAgg::Sum(col(c)?),
                    (AggName::Min, Some(c)) => OutputAgg::Min(col(c)?),
                    (AggName::Max, Some(c)) => OutputAgg::Max(col(c)?),
                    (AggName::Avg, Some(c)) => OutputAgg::Avg(col(c)?),
                    _ => bail!("aggregate needs a column argument; {}", sqlparse::SUBSET_HELP),
                };
                if let Some(c) = match agg {
                    OutputAgg::CountStar => None,
                    OutputAgg::CountCol(c)
                    | OutputAgg::Sum(c)
                    | OutputAgg::Min(c)
                    | OutputAgg::Max(c)
                    | OutputAgg::Avg(c) => Some(c),
                } {
                    input_columns.push(c);
                }
                outputs.push(AggOutput::Agg(agg));
                let func_name = match func {
                    AggName::Count => "COUNT",
                    AggName::Sum => "SUM",
                    AggName::Min => "MIN",
                    AggName::Max => "MAX",
                    AggName::Avg => "AVG",
                };
                names.push(match arg {
                    None => format!("{func_name}(*)"),
                    Some(c) => format!("{func_name}({c})"),
                });
            }
        }
    }
    Ok((Shape::Aggregate { group_by, outputs, input_columns }, names))
}

/// Tightest bound pair extractable from conjuncts on the leading key
/// column. The conjuncts stay in the predicate sets; the range only
/// prunes pages.
fn extract_range(conjuncts: &[PredExpr]) -> ScanRange {
    let mut low: Bound<Vec<Value>> = Bound::Unbounded;
    let mut high: Bound<Vec<Value>> = Bound::Unbounded;
    let tighter_low = |cur: &Bound<Vec<Value>>, v: &Value, excl: bool| -> Option<Bound<Vec<Value>>> {
        let candidate = vec![v.clone()];
        match cur {
            Bound::Unbounded => {}
            Bound::Included(c) | Bound::Excluded(c) => {
                match compare_keys(&candidate, c) {
                    Ordering::Less => return None,
                    Ordering::Equal if matches!(cur, Bound::Excluded(_)) => return None,
                    _ => {}
                }
            }
        }
        Some(if excl { Bound::Excluded(candidate) } else { Bound::Included(candidate) })
    };
    let tighter_high = |cur: &Bound<Vec<Value>>, v: &Value, excl: bool| -> Option<Bound<Vec<Value>>> {
        let candidate = vec![v.clone()];
        match cur {
            Bound::Unbounded => {}
            Bound::Included(c) | Bound::Excluded(c) => {
                match compare_keys(&candidate, c) {
                    Ordering::Greater => return None,
                    Ordering::Equal if matches!(cur, Bound::Excluded(_)) => return None,
                    _ => {}
                }
            }
        }
        Some(if excl { Bound::Excluded(candidate) } else { Bound::Included(candidate) })
    };

    for c in conjuncts {
        let (op, v) = match c {
            PredExpr::Compare(op, l, r) => match (l.as_ref(), r.as_ref()) {
                (PredExpr::ColumnRef(0), PredExpr::Literal(v)) if !v.is_null() => (*op, v),
                (PredExpr::Literal(v), PredExpr::ColumnRef(0)) if !v.is_null() => {
                    // Mirror the comparison around the column.
                    let m = match op {
                        CmpOp::Lt => CmpOp::Gt,
                        CmpOp::Le => CmpOp::Ge,
                        CmpOp::Gt => CmpOp::Lt,
                        CmpOp::Ge => CmpOp::Le,
                        other => *other,
                    };
                    (m, v)
                }
                _ => continue,
            },
            _ => continue,
        };
        match op {
            CmpOp::Ge => {
                if let Some(b) = tighter_low(&low, v, false) {
                    low = b;
                }
            }
            CmpOp::Gt => {
                if let Some(b) = tighter_low(&low, v, true) {
                    low = b;
                }
            }
            CmpOp::Le => {
                if let Some(b) = tighter_high(&high, v, false) {
                    high = b;
                }
            }
            CmpOp::Lt => {
                if let Some(b) = tighter_high(&high, v, true) {
                    high = b;
                }
            }
            CmpOp::Eq => {
                if let Some(b) = tighter_low(&low, v, false) {
                    low = b;
                }
                if let Some(b) = tighter_high(&high, v, false) {
                    high = b;
                }
            }
            CmpOp::Ne => {}
        }
    }
    ScanRange { low, high }
}

/// Fraction of leaves the range touches, from the page directory.
fn range_fraction(cluster: &Cluster, range: &ScanRange) -> f64 {
    let leaves: Vec<_> = cluster
        .tree
        .directory_snapshot()
        .into_iter()
        .filter(|(_, m)| m.level == 0)
        .collect();
    if leaves.is_empty() {
        return 1.0;
    }
    let hit = leaves
        .iter()
        .filter(|(_, m)| range.intersects(m.low.as_deref(), m.high.as_deref()))
        .count();
    hit as f64 / leaves.len() as f64
}

pub fn run_query(cluster: &Cluster, sql: &str, flags: QueryFlags) -> Result<QueryOutcome> {
    let parsed = sqlparse::parse(sql)?;
    let schema = cluster.schema().clone();
    if !parsed.table.eq_ignore_ascii_case(&schema.table_name) {
        bail!("unknown table {:?} (loaded: {:?})", parsed.table, schema.table_name);
    }
    let where_expr =
        parsed.where_expr.as_ref().map(|raw| sqlparse::bind_expr(raw, &schema)).transpose()?;
    let (shape, names) = bind_select(&parsed, &schema)?;

    let where_conjuncts: Vec<PredExpr> =
        where_expr.as_ref().map(conjuncts).unwrap_or_default();
    let range = extract_range(&where_conjuncts);
    let bounded = !matches!(
        (&range.low, &range.high),
        (Bound::Unbounded, Bound::Unbounded)
    );
    let point = schema.pk_prefix_len == 1
        && matches!((&range.low, &range.high), (Bound::Included(a), Bound::Included(b)) if a == b);
    let path = if point {
        AccessPath::PointLookup
    } else if bounded {
        AccessPath::RangeScan { fraction: range_fraction(cluster, &range) }
    } else {
        AccessPath::FullScan
    };

    let (select_columns, aggregation, agg_plan) = match &shape {
        Shape::Columns(cols) => (cols.clone(), None, None),
        Shape::Aggregate { group_by, outputs, input_columns } => {
            let plan = AggPlan::new(group_by.clone(), outputs.clone(), &schema)?;
            (
                Vec::new(),
                Some(AccessAggregation {
                    group_by: group_by.clone(),
                    input_columns: input_columns.clone(),
                }),
                Some(plan),
            )
        }
    };

    let mut stats = cluster.manifest.stats.clone();
    stats.resident_pages = cluster.handles.pool.resident_count() as u64;

    let access = AccessSpec {
        path,
        where_expr: where_expr.clone(),
        select_columns: select_columns.clone(),
        aggregation,
        last_table_in_block: true,
    };
    let plan = decide_ndp(
        &access,
        &stats,
        &schema,
        cluster.config.page_size,
        cluster.config.fill_factor,
        &cluster.config.planner,
    );

    let mut explain = vec![format!(
        "table access: {} ({})",
        schema.table_name,
        match path {
            AccessPath::FullScan => "full scan".to_string(),
            AccessPath::RangeScan { fraction } =>
                format!("range scan, ~{:.0}% of keys", fraction * 100.0),
            AccessPath::PointLookup => "point lookup".to_string(),
        }
    )];
    explain.extend(plan.explain.iter().cloned());
    if flags.explain {
        return Ok(QueryOutcome {
            columns: names,
            types: output_types(&shape, &schema),
            rows: Vec::new(),
            metrics: QueryMetrics::default(),
            explain,
        });
    }

    let view = cluster.txns.read_view();
    let projection: Option<Vec<u16>> = if plan.project {
        Some(required_columns(&access, &schema).into_iter().map(|c| c as u16).collect())
    } else {
        None
    };
    let predicate = if plan.filter {
        let pushed = plan
            .pushed_predicates
            .clone()
            .into_iter()
            .reduce(PredExpr::and)
            .expect("filter flag implies pushed predicates");
        Some(compile(&pushed, &schema).map_err(|e| anyhow!("compiling pushed predicate: {e}"))?)
    } else {
        None
    };
    let agg_push = if plan.aggregate {
        let plan_ref = agg_plan.as_ref().expect("aggregate flag implies aggregation");
        Some(AggSpec {
            functions: plan_ref.functions.clone(),
            group_by: plan_ref.group_by.iter().map(|&c| c as u16).collect(),
        })
    } else {
        None
    };
    let descriptor = Arc::new(NdpDescriptor::new(
        &schema,
        projection,
        predicate,
        agg_push,
        view.low_watermark,
    )?);

    let spec = ScanSpec {
        range,
        read_view: view,
        descriptor,
        ndp_requested: flags.ndp_enabled
            && plan.any()
            && !cluster.config.compute.ndp_push_disabled,
        residual: plan.residual_predicates.clone(),
        output_columns: select_columns,
        agg: agg_plan,
    };

    let (rows, metrics) = if flags.dop <= 1 {
        let cursor = NdpScanCursor::new(cluster.handles.clone(), spec);
        let (out, metrics) = cursor.run_to_end(false)?;
        match out {
            ScanOutput::Rows(rows) => (rows, metrics),
            ScanOutput::Partials(_) => unreachable!(),
        }
    } else {
        pq_execute(&cluster.handles, &spec, flags.dop)?
    };

    Ok(QueryOutcome { columns: names, types: output_types(&shape, &schema), rows, metrics, explain })
}

fn output_types(shape: &Shape, schema: &ndp_core::schema::Schema) -> Vec<TypeTag> {
    match shape {
        Shape::Columns(cols) => cols.iter().map(|&c| schema.column_type(c).tag).collect(),
        Shape::Aggregate { group_by, outputs, .. } => {
            match AggPlan::new(group_by.clone(), outputs.clone(), schema) {
                Ok(plan) => plan.result_types(schema),
                Err(_) => Vec::new(),
            }
        }
    }
}

/// Renders rows as tab-separated text with a header.
pub fn render_table(outcome: &QueryOutcome) -> String {
    let mut out = String::new();
    out.push_str(&outcome.columns.join("\t"));
    out.push('\n');
    for row in &outcome.rows {
        let rendered: Vec<String> = row
            .iter()
            .zip(outcome.types.iter())
            .map(|(v, t)| v.render(t))
            .collect();
        out.push_str(&rendered.join("\t"));
        out.push('\n');
    }
    out
}
