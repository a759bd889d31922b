//! The scaled reduction benchmark.
//!
//! Five queries run under three configurations — pushdown off, pushdown
//! on, and pushdown plus parallel query — each on a fresh execution
//! environment (cold buffer pool, cold descriptor caches) over the same
//! generated table. The report derives the reduction ratios the
//! methodology cares about: wire bytes (network traffic), locally
//! evaluated rows (the deterministic CPU proxy), and wall time.

use crate::catalog::{compute_stats, Manifest};
use crate::cluster::Cluster;
use crate::exec::{run_query, QueryFlags};
use crate::gen;
use anyhow::{ensure, Context, Result};
use ndp_core::btree::{BTree, BTreeConfig, PageVersionStore, UndoLog};
use ndp_core::config::EngineConfig;
use ndp_core::metrics::QueryMetrics;
use serde::Serialize;
use std::sync::Arc;
use std::time::Instant;

pub fn bench_queries() -> Vec<(&'static str, String)> {
    vec![
        ("Q0", "SELECT COUNT(*) FROM lineitem".to_string()),
        (
            "Q001",
            "SELECT COUNT(*) FROM lineitem WHERE l_shipdate < DATE '1998-07-01'".to_string(),
        ),
        (
            "Q002",
            // Range scan over the leading key, roughly 40% of orders.
            "SELECT COUNT(*) FROM lineitem WHERE l_orderkey <= 10000".to_string(),
        ),
        (
            "Q1",
            "SELECT l_orderkey, COUNT(*), SUM(l_quantity), AVG(l_extendedprice) \
             FROM lineitem WHERE l_orderkey <= 2000 GROUP BY l_orderkey"
                .to_string(),
        ),
        (
            "Q6",
            "SELECT SUM(l_extendedprice) FROM lineitem \
             WHERE l_shipdate >= DATE '1994-01-01' AND l_shipdate < DATE '1995-01-01' \
             AND l_discount >= 0.05 AND l_discount <= 0.07 AND l_quantity < 24.00"
                .to_string(),
        ),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub rows_returned: u64,
    pub wall_time_micros: u64,
    #[serde(flatten)]
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryReport {
    pub name: String,
    pub sql: String,
    pub off: RunMetrics,
    pub ndp: RunMetrics,
    pub ndp_pq: RunMetrics,
    /// 1 - bytes(ndp)/bytes(off).
    pub data_reduction: f64,
    /// 1 - rows_evaluated_locally(ndp)/rows_evaluated_locally(off).
    pub cpu_reduction: f64,
    /// 1 - wall(ndp)/wall(off).
    pub runtime_reduction: f64,
    /// 1 - wall(ndp_pq)/wall(off).
    pub runtime_reduction_pq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub profile: String,
    pub scale_rows: u64,
    pub seed: u64,
    pub dop: usize,
    pub queries: Vec<QueryReport>,
}

fn ratio_reduction(off: u64, with: u64) -> f64 {
    if off == 0 {
        0.0
    } else {
        1.0 - with as f64 / off as f64
    }
}

/// Builds the profile table in memory and wires a cluster around it.
pub fn build_profile(scale_rows: u64, seed: u64, config: EngineConfig) -> Result<Cluster> {
    let schema = gen::lineitem_schema();
    let rows = gen::generate(scale_rows, seed);
    let stats = compute_stats(&schema, &rows);
    let tree_config = BTreeConfig {
        page_size: config.page_size,
        fill_factor: config.fill_factor,
        slice_size_pages: config.slice_size_pages,
    };
    let tree = Arc::new(
        BTree::bulk_load(
            rows,
            schema.clone(),
            tree_config,
            Arc::new(PageVersionStore::new()),
            Arc::new(UndoLog::new()),
        )
        .context("building the benchmark table")?,
    );
    let manifest = Manifest {
        schema,
        page_size: config.page_size,
        fill_factor: config.fill_factor,
        slice_size_pages: config.slice_size_pages,
        root_page_id: tree.root_page_id(),
        current_lsn: tree.current_lsn(),
        next_page_id: tree.next_page_id(),
        row_count: scale_rows,
        stats,
    };
    Cluster::over_tree(manifest, tree, config)
}

fn timed_run(base: &Cluster, sql: &str, flags: QueryFlags) -> Result<(RunMetrics, Vec<Vec<ndp_core::value::Value>>)> {
    // Fresh stores, caches, and buffer pool per configuration run.
    let cluster = base.fresh_run()?;
    let started = Instant::now();
    let outcome = run_query(&cluster, sql, flags)?;
    let wall = started.elapsed().as_micros() as u64;
    Ok((
        RunMetrics {
            rows_returned: outcome.rows.len() as u64,
            wall_time_micros: wall,
            metrics: outcome.metrics,
        },
        outcome.rows,
    ))
}

pub fn run_bench(scale_rows: u64, seed: u64, dop: usize, config: EngineConfig) -> Result<BenchReport> {
    let base = build_profile(scale_rows, seed, config)?;
    let mut queries = Vec::new();
    for (name, sql) in bench_queries() {
        let (off, off_rows) =
            timed_run(&base, &sql, QueryFlags { ndp_enabled: false, dop: 1, explain: false })?;
        let (ndp, ndp_rows) =
            timed_run(&base, &sql, QueryFlags { ndp_enabled: true, dop: 1, explain: false })?;
        let (ndp_pq, pq_rows) =
            timed_run(&base, &sql, QueryFlags { ndp_enabled: true, dop, explain: false })?;
        ensure!(off_rows == ndp_rows, "{name}: pushdown changed the result");
        ensure!(off_rows == pq_rows, "{name}: parallel execution changed the result");

        queries.push(QueryReport {
            name: name.to_string(),
            sql,
            data_reduction: ratio_reduction(off.metrics.bytes_on_wire, ndp.metrics.bytes_on_wire),
            cpu_reduction: ratio_reduction(
                off.metrics.rows_evaluated_locally,
                ndp.metrics.rows_evaluated_locally,
            ),
            runtime_reduction: ratio_reduction(off.wall_time_micros, ndp.wall_time_micros),
            runtime_reduction_pq: ratio_reduction(off.wall_time_micros, ndp_pq.wall_time_micros),
            off,
            ndp,
            ndp_pq,
        });
    }
    Ok(BenchReport { profile: "tpch-mini".into(), scale_rows, seed, dop, queries })
}

/// Human-readable summary table.
pub fn render_report(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "profile {} scale {} seed {} dop {}\n",
        report.profile, report.scale_rows, report.seed, report.dop
    ));
    out.push_str(&format!(
        "{:<6} {:>14} {:>14} {:>9} {:>9} {:>9} {:>12}\n",
        "query", "bytes off", "bytes ndp", "data", "cpu", "runtime", "runtime(pq)"
    ));
    for q in &report.queries {
        out.push_str(&format!(
            "{:<6} {:>14} {:>14} {:>8.1}% {:>8.1}% {:>8.1}% {:>11.1}%\n",
            q.name,
            q.off.metrics.bytes_on_wire,
            q.ndp.metrics.bytes_on_wire,
            q.data_reduction * 100.0,
            q.cpu_reduction * 100.0,
            q.runtime_reduction * 100.0,
            q.runtime_reduction_pq * 100.0,
        ));
    }
    out
}
