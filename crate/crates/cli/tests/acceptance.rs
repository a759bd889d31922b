//! Acceptance suite. Runs every criterion sequentially (custom harness)
//! and prints one pass/fail line per criterion; any failure fails the
//! test target. Tolerances and thresholds are pinned here, in code.

use ndp_cli::bench;
use ndp_cli::catalog::{compute_stats, Manifest};
use ndp_cli::cluster::Cluster;
use ndp_cli::exec::{run_query, QueryFlags};
use ndp_cli::gen;
use ndp_core::btree::{BTree, BTreeConfig, PageVersionStore, ScanRange, UndoLog, WriteOp};
use ndp_core::compute::{NdpScanCursor, ScanOutput, ScanSpec};
use ndp_core::config::{ComputeConfig, EngineConfig, PageStoreConfig, PageStoreEndpointConfig};
use ndp_core::descriptor::{AggFunc, AggSpec, NdpDescriptor};
use ndp_core::page::Page;
use ndp_core::pagestore::{cross_page_aggregate, ndp_process_page};
use ndp_core::predicate::{compile, evaluate, interpret, CmpOp, PredExpr};
use ndp_core::record::{encode_record, AggEntry, Record, RecordStatus, RowView};
use ndp_core::schema::Schema;
use ndp_core::testkit::{self, predgen};
use ndp_core::util::XorShift64;
use ndp_core::value::{compare_keys, ColumnType as Ct, TypeTag as T, Value};
use std::ops::Bound;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

const SCALE: u64 = 100_000;
const SEED: u64 = 20240817;

fn main() {
    let mut failed = 0usize;
    let mut run = |number: u32, name: &str, f: &mut dyn FnMut() -> Result<String, String>| {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(&mut *f))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| p.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {number:>2} ({secs:6.1}s): {name} — {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {number:>2} ({secs:6.1}s): {name} — {detail}");
            }
        }
    };

    run(1, "oracle-equivalence fuzz across configurations", &mut criterion_1);
    run(2, "per-page and cross-page folding worked example", &mut criterion_2);
    run(3, "MVCC snapshot stability under a concurrent mutator", &mut criterion_3);
    run(4, "key-ordered output across randomized topologies", &mut criterion_4);
    run(5, "predicate bytecode differential test", &mut criterion_5);
    run(6, "batch reads request exactly the overlapping leaves", &mut criterion_6);
    run(7, "scaled reduction methodology on tpch-mini", &mut criterion_7);
    run(8, "best-effort degradation with zero admission capacity", &mut criterion_8);
    run(9, "descriptor cache hit behavior across batches", &mut criterion_9);
    run(10, "resource and memory bounds on every fuzz run", &mut criterion_10);
    run(11, "parallel-query speedup under injected latency", &mut criterion_11);

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(101);
    }
    println!("all criteria passed");
}

fn base_config() -> EngineConfig {
    EngineConfig::default()
}

fn lineitem_cluster(config: EngineConfig) -> Cluster {
    bench::build_profile(SCALE, SEED, config).expect("profile builds")
}

/// Random query text over the lineitem schema: predicates of every
/// supported type, projections, scalar and grouped aggregation, and key
/// ranges.
fn random_query(rng: &mut XorShift64) -> String {
    let mut predicates: Vec<String> = Vec::new();
    let n_preds = rng.next_range(4);
    for _ in 0..n_preds {
        predicates.push(match rng.next_range(8) {
            0 => format!(
                "l_shipdate >= DATE '199{}-0{}-01'",
                rng.next_range(7) + 2,
                rng.next_range(9) + 1
            ),
            1 => format!(
                "l_shipdate < DATE '199{}-0{}-15'",
                rng.next_range(7) + 2,
                rng.next_range(9) + 1
            ),
            2 => format!("l_discount >= 0.0{}", rng.next_range(10)),
            3 => format!("l_quantity < {}.00", rng.next_range(50) + 1),
            4 => format!("l_orderkey <= {}", rng.next_range(SCALE / 4) + 100),
            5 => format!("l_returnflag = '{}'", ["A", "N", "R"][rng.next_range(3) as usize]),
            6 => "l_comment IS NULL".to_string(),
            _ => format!(
                "(l_suppkey < {} OR l_partkey > {})",
                rng.next_range(1000),
                rng.next_range(20000)
            ),
        });
    }
    let where_clause = if predicates.is_empty() {
        String::new()
    } else {
        format!(" WHERE {}", predicates.join(" AND "))
    };

    match rng.next_range(4) {
        // Plain projection scans.
        0 => {
            let cols = [
                "l_orderkey",
                "l_linenumber",
                "l_quantity",
                "l_shipdate",
                "l_comment",
                "l_extendedprice",
            ];
            let n = rng.next_range(4) + 2;
            let mut picked: Vec<&str> = vec!["l_orderkey", "l_linenumber"];
            for _ in 0..n {
                let c = cols[rng.next_range(cols.len() as u64) as usize];
                if !picked.contains(&c) {
                    picked.push(c);
                }
            }
            format!("SELECT {} FROM lineitem{}", picked.join(", "), where_clause)
        }
        // Scalar aggregation.
        1 => {
            let aggs = [
                "COUNT(*)",
                "SUM(l_extendedprice)",
                "AVG(l_quantity)",
                "MIN(l_shipdate)",
                "MAX(l_quantity)",
                "COUNT(l_comment)",
            ];
            let mut picked = vec![aggs[rng.next_range(6) as usize]];
            if rng.next_range(2) == 0 {
                picked.push(aggs[rng.next_range(6) as usize]);
            }
            format!("SELECT {} FROM lineitem{}", picked.join(", "), where_clause)
        }
        // Grouped aggregation on the key prefix.
        2 => format!(
            "SELECT l_orderkey, COUNT(*), SUM(l_quantity) FROM lineitem{} GROUP BY l_orderkey",
            where_clause
        ),
        // Narrow key-range scans.
        _ => {
            let lo = rng.next_range(SCALE / 4);
            format!(
                "SELECT l_orderkey, l_linenumber, l_extendedprice FROM lineitem \
                 WHERE l_orderkey >= {lo} AND l_orderkey < {}",
                lo + rng.next_range(2000) + 1
            )
        }
    }
}

fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let plain = lineitem_cluster(base_config());
    let skipping = lineitem_cluster(EngineConfig {
        pagestore: PageStoreConfig { skip_probability: 0.5, skip_seed: 4242, ..Default::default() },
        ..base_config()
    });

    let mut rng = XorShift64::new(SEED);
    let n_queries = 200;
    for i in 0..n_queries {
        let sql = random_query(&mut rng);
        let off = run_query(
            &plain.fresh_run().unwrap(),
            &sql,
            QueryFlags { ndp_enabled: false, dop: 1, explain: false },
        )
        .map_err(|e| format!("query {i} off: {e:#} [{sql}]"))?;
        let on = run_query(
            &plain.fresh_run().unwrap(),
            &sql,
            QueryFlags { ndp_enabled: true, dop: 1, explain: false },
        )
        .map_err(|e| format!("query {i} on: {e:#} [{sql}]"))?;
        let skip = run_query(
            &skipping.fresh_run().unwrap(),
            &sql,
            QueryFlags { ndp_enabled: true, dop: 1, explain: false },
        )
        .map_err(|e| format!("query {i} skip: {e:#} [{sql}]"))?;
        let pq = run_query(
            &plain.fresh_run().unwrap(),
            &sql,
            QueryFlags { ndp_enabled: true, dop: 4, explain: false },
        )
        .map_err(|e| format!("query {i} dop4: {e:#} [{sql}]"))?;

        for (name, other) in [("on", &on), ("skip-50%", &skip), ("dop4", &pq)] {
            if other.rows != off.rows {
                return Err(format!(
                    "query {i}: {name} diverged from off ({} vs {} rows) [{sql}]",
                    other.rows.len(),
                    off.rows.len()
                ));
            }
        }
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs() >= 300 {
        return Err(format!("runtime budget exceeded: {elapsed:?} >= 5 min"));
    }
    Ok(format!("{n_queries} queries x 4 configurations bit-identical in {elapsed:.1?}"))
}

fn criterion_2() -> Result<String, String> {
    let schema =
        Schema::new("t", vec![("id", Ct::new(T::Int64)), ("v", Ct::new(T::Int64))], 1, 1).unwrap();
    let watermark = 50;
    let leaf = |rows: &[(i64, i64, bool)], page_id: u64| {
        let mut page = Page::new_leaf(page_id, 1);
        for &(id, v, ambiguous) in rows {
            let trx = if ambiguous { 100 } else { 1 };
            page.insert_user_record(
                Record::ordinary(trx, vec![Value::Int64(id), Value::Int64(v)]),
                &schema,
            )
            .unwrap();
        }
        page
    };
    let p1 = leaf(&[(1, 2, false), (2, 10, true), (3, 7, false), (4, 8, true), (5, 2, false)], 1);
    let p2 = leaf(&[(11, 10, false), (12, 2, true), (13, 5, false), (14, 9, false)], 2);
    let descriptor = NdpDescriptor::new(
        &schema,
        None,
        None,
        Some(AggSpec { functions: vec![AggFunc::Sum(1)], group_by: vec![] }),
        watermark,
    )
    .unwrap();

    let (n1, _) = ndp_process_page(&p1, &descriptor, &schema).map_err(|e| e.to_string())?;
    let (n2, _) = ndp_process_page(&p2, &descriptor, &schema).map_err(|e| e.to_string())?;
    let sum_of = |rec: &Record| match rec.agg_payload.as_ref().unwrap().entries[0] {
        AggEntry::Sum(s) => s,
        _ => unreachable!(),
    };
    let payload_1 = sum_of(n1.records.last().unwrap());
    let payload_2 = sum_of(n2.records.last().unwrap());
    if payload_1 != 9 {
        return Err(format!("first page payload {payload_1}, expected 9"));
    }
    if payload_2 != 15 {
        return Err(format!("second page payload {payload_2}, expected 15"));
    }

    let mut pages = vec![n1, n2];
    cross_page_aggregate(&mut pages, &descriptor).map_err(|e| e.to_string())?;
    let carrier = pages[1].records.last().unwrap();
    let cross = sum_of(carrier);
    if cross != 26 {
        return Err(format!("cross-page payload {cross}, expected 26"));
    }
    if carrier.values != vec![Value::Int64(14), Value::Int64(9)] {
        return Err("final carrier is not record (14, 9)".into());
    }

    // Ambiguous records byte-unchanged in both result pages.
    for (page, inputs) in [(&pages[0], &p1), (&pages[1], &p2)] {
        for rec in page.records.iter().filter(|r| r.status == RecordStatus::Ordinary) {
            let input = inputs
                .records
                .iter()
                .find(|r| r.values[0] == rec.values[0])
                .expect("pass-through has an input");
            let a = encode_record(&schema, rec, None).unwrap();
            let b = encode_record(&schema, input, None).unwrap();
            if a != b {
                return Err(format!("ambiguous record {:?} not byte-identical", rec.values[0]));
            }
        }
    }
    if !pages[0].records.iter().all(|r| r.status == RecordStatus::Ordinary) {
        return Err("first page kept a non-ambiguous record after the cross-page fold".into());
    }
    Ok("payloads 9, 15, and 26 exact; ambiguous records byte-identical".into())
}

fn criterion_3() -> Result<String, String> {
    // A dedicated smaller profile: every write appends a whole page
    // version, so the mutation history stays bounded.
    let config = EngineConfig { page_size: 8192, slice_size_pages: 32, ..base_config() };
    let cluster = bench::build_profile(25_000, SEED ^ 3, config).expect("profile builds");
    let schema = cluster.schema().clone();
    let pre_view = cluster.txns.read_view();
    let snapshot = testkit::visible_rows(&cluster.tree, &pre_view);

    // An extra configuration sharing the live tree, with random skipping.
    let manifest: Manifest =
        serde_json::from_slice(&serde_json::to_vec(&cluster.manifest).unwrap()).unwrap();
    let skipping = Cluster::over_tree(
        manifest,
        cluster.tree.clone(),
        EngineConfig {
            pagestore: PageStoreConfig { skip_probability: 0.5, skip_seed: 9, ..Default::default() },
            ..base_config()
        },
    )
    .map_err(|e| e.to_string())?;

    // Reference result for a filtered projection, computed pre-mutation.
    let pred = PredExpr::cmp(
        CmpOp::Lt,
        PredExpr::ColumnRef(4),
        PredExpr::Literal(Value::Decimal(2500)),
    );
    let reference = testkit::run_reference(
        &testkit::ReferenceQuery {
            schema: &schema,
            where_expr: Some(&pred),
            select: testkit::ReferenceSelect::Columns(vec![0, 1, 4]),
            range: None,
        },
        &snapshot,
    );

    let stop = Arc::new(AtomicBool::new(false));
    let mutator = {
        let tree = cluster.tree.clone();
        let txns = cluster.txns.clone();
        let stop = stop.clone();
        std::thread::spawn(move || {
            let mut rng = XorShift64::new(777);
            let mut writes = 0u64;
            while writes < 1200 || !stop.load(Ordering::Relaxed) {
                if writes >= 12_000 {
                    break;
                }
                if writes.is_multiple_of(64) {
                    std::thread::sleep(std::time::Duration::from_millis(1));
                }
                let txn = txns.begin();
                let orderkey = (rng.next_range(25_000 / 4) + 1) as i64;
                let line = (rng.next_range(4) + 1) as i64;
                let pk = vec![Value::Int64(orderkey), Value::Int64(line)];
                let op = match rng.next_range(3) {
                    0 => WriteOp::Delete { pk },
                    1 => WriteOp::Update {
                        pk,
                        non_key_values: vec![
                            Value::Int64(1),
                            Value::Int64(1),
                            Value::Decimal(rng.next_range(5000) as i64),
                            Value::Decimal(100_000),
                            Value::Decimal(rng.next_range(11) as i64),
                            Value::Decimal(0),
                            Value::Varchar(b"X".to_vec()),
                            Value::Varchar(b"X".to_vec()),
                            Value::Date(9000),
                            Value::Date(9000),
                            Value::Date(9000),
                            Value::Null,
                            Value::Varchar(b"MAIL".to_vec()),
                            Value::Null,
                        ],
                    },
                    _ => {
                        let mut row = gen::generate(1, rng.next_u64()).pop().unwrap();
                        row[0] = Value::Int64(25_000 + rng.next_range(1 << 20) as i64);
                        row[1] = Value::Int64(1);
                        WriteOp::Insert { values: row }
                    }
                };
                let _ = tree.apply_write(txn, op);
                txns.commit(txn);
                writes += 1;
            }
            writes
        })
    };

    let program = compile(&pred, &schema).unwrap();
    let descriptor = Arc::new(
        NdpDescriptor::new(
            &schema,
            Some(vec![0, 1, 4]),
            Some(program.clone()),
            None,
            pre_view.low_watermark,
        )
        .unwrap(),
    );
    let make_spec = |ndp: bool| ScanSpec {
        range: ScanRange::all(),
        read_view: pre_view.clone(),
        descriptor: descriptor.clone(),
        ndp_requested: ndp,
        residual: vec![],
        output_columns: vec![0, 1, 4],
        agg: None,
    };

    let configs: Vec<(&str, &Cluster, bool, usize)> = vec![
        ("off", &cluster, false, 1),
        ("on", &cluster, true, 1),
        ("on+skip50", &skipping, true, 1),
        ("on+dop4", &cluster, true, 4),
    ];
    for (name, target, ndp, dop) in configs {
        let spec = make_spec(ndp);
        let result = if dop == 1 {
            NdpScanCursor::new(target.handles.clone(), spec)
                .run_to_end(false)
                .map(|(out, _)| match out {
                    ScanOutput::Rows(rows) => rows,
                    _ => unreachable!(),
                })
        } else {
            ndp_core::compute::pq_execute(&target.handles, &spec, dop).map(|(rows, _)| rows)
        };
        let rows = match result {
            Ok(rows) => rows,
            Err(e) => {
                stop.store(true, Ordering::Relaxed);
                let _ = mutator.join();
                return Err(format!("{name}: {e}"));
            }
        };
        if rows != reference {
            stop.store(true, Ordering::Relaxed);
            let _ = mutator.join();
            return Err(format!(
                "{name}: scan under mutation returned {} rows, snapshot has {}",
                rows.len(),
                reference.len()
            ));
        }
    }
    stop.store(true, Ordering::Relaxed);
    let writes = mutator.join().map_err(|_| "mutator panicked".to_string())?;
    if writes < 1000 {
        return Err(format!("mutator only issued {writes} writes during the scans"));
    }

    // Instrumented check: freshly mutated leaves processed with the
    // pre-write descriptor keep every at-or-above-watermark record
    // byte-identical and never fold or narrow one.
    let mut checked_ambiguous = 0usize;
    let mut mutated_pages = 0usize;
    for leaf in cluster.tree.leaf_ids_in_order() {
        let bytes = cluster.tree.store().latest(leaf).unwrap();
        let page = ndp_core::page::decode_page(&bytes, &schema, None).unwrap();
        if !page.iter().any(|r| r.trx_id >= pre_view.low_watermark) {
            continue;
        }
        mutated_pages += 1;
        let (out, stats) =
            ndp_process_page(&page, &descriptor, &schema).map_err(|e| e.to_string())?;
        for rec in out.iter() {
            match rec.status {
                RecordStatus::Ordinary => {
                    let input = page
                        .records
                        .iter()
                        .find(|r| r.key(&schema) == rec.key(&schema))
                        .expect("pass-through input");
                    if encode_record(&schema, rec, None).unwrap()
                        != encode_record(&schema, input, None).unwrap()
                    {
                        return Err("page store modified an ambiguous record".into());
                    }
                    checked_ambiguous += 1;
                }
                _ => {
                    if rec.trx_id >= pre_view.low_watermark {
                        return Err(format!(
                            "page store processed a record with trx {} >= watermark {}",
                            rec.trx_id, pre_view.low_watermark
                        ));
                    }
                }
            }
        }
        if stats.ambiguous_passed == 0 {
            return Err("mutated page reported no ambiguous records".into());
        }
        if mutated_pages >= 300 {
            break;
        }
    }
    if mutated_pages == 0 {
        return Err("no mutated pages found to instrument".into());
    }
    Ok(format!(
        "{writes} concurrent writes; 4 configurations returned the pre-write snapshot; \
         {checked_ambiguous} ambiguous records on {mutated_pages} mutated pages byte-identical"
    ))
}

fn criterion_4() -> Result<String, String> {
    let schema = Schema::new(
        "t",
        vec![
            ("id", Ct::new(T::Int64)),
            ("v", Ct::new(T::Int64)),
            ("s", Ct::nullable(T::Varchar { max_len: 8 })),
        ],
        1,
        55,
    )
    .unwrap();
    let mut rng = XorShift64::new(SEED ^ 0x70);
    let mut topologies = 0;
    while topologies < 50 {
        topologies += 1;
        let n_rows = 2000 + rng.next_range(4000) as i64;
        let rows: Vec<Vec<Value>> = (0..n_rows)
            .map(|i| {
                vec![
                    Value::Int64(i * 3),
                    Value::Int64((i * 7) % 95),
                    if i % 13 == 0 { Value::Null } else { Value::Varchar(b"x".to_vec()) },
                ]
            })
            .collect();
        let config = EngineConfig {
            page_size: 4096,
            slice_size_pages: 2 + rng.next_range(14),
            pagestore: PageStoreConfig {
                service_delay_ms: rng.next_range(2),
                ndp_pool_size: 1 + rng.next_range(4) as usize,
                ..Default::default()
            },
            compute: ComputeConfig {
                ndp_max_pages_look_ahead: [2usize, 4, 8, 16][rng.next_range(4) as usize],
                ..Default::default()
            },
            pagestores: (0..1 + rng.next_range(4) as u32)
                .map(|id| PageStoreEndpointConfig { id, addr: "inproc".into() })
                .collect(),
            ..EngineConfig::default()
        };
        let stats = compute_stats(&schema, &rows);
        let tree = Arc::new(
            BTree::bulk_load(
                rows.clone(),
                schema.clone(),
                BTreeConfig {
                    page_size: config.page_size,
                    fill_factor: config.fill_factor,
                    slice_size_pages: config.slice_size_pages,
                },
                Arc::new(PageVersionStore::new()),
                Arc::new(UndoLog::new()),
            )
            .unwrap(),
        );
        let manifest = Manifest {
            schema: schema.clone(),
            page_size: config.page_size,
            fill_factor: config.fill_factor,
            slice_size_pages: config.slice_size_pages,
            root_page_id: tree.root_page_id(),
            current_lsn: tree.current_lsn(),
            next_page_id: tree.next_page_id(),
            row_count: rows.len() as u64,
            stats,
        };
        let cluster = Cluster::over_tree(manifest, tree, config).map_err(|e| e.to_string())?;

        let lo = rng.next_range((n_rows as u64) * 3) as i64;
        let hi = lo + rng.next_range(n_rows as u64 * 2) as i64 + 1;
        let sql = format!("SELECT id, v FROM t WHERE id >= {lo} AND id <= {hi} AND v < 60");
        let outcome = run_query(&cluster, &sql, QueryFlags::default())
            .map_err(|e| format!("topology {topologies}: {e:#}"))?;

        for pair in outcome.rows.windows(2) {
            if compare_keys(&pair[0][..1], &pair[1][..1]) != std::cmp::Ordering::Less {
                return Err(format!("topology {topologies}: rows out of key order"));
            }
        }
        let range = ScanRange {
            low: Bound::Included(vec![Value::Int64(lo)]),
            high: Bound::Included(vec![Value::Int64(hi)]),
        };
        let reference: Vec<Vec<Value>> = rows
            .iter()
            .filter(|r| range.contains(&r[..1]))
            .filter(|r| matches!(r[1], Value::Int64(v) if v < 60))
            .map(|r| vec![r[0].clone(), r[1].clone()])
            .collect();
        if outcome.rows != reference {
            return Err(format!(
                "topology {topologies}: {} rows, reference {}",
                outcome.rows.len(),
                reference.len()
            ));
        }
    }
    Ok(format!("{topologies} randomized topologies, all outputs strictly ascending and exact"))
}

fn criterion_5() -> Result<String, String> {
    let s = predgen::fuzz_schema();
    let mut rng = XorShift64::new(SEED ^ 0xF22);
    let mut compiled = 0usize;
    let mut checked_pairs = 0u64;
    for i in 0..10_000 {
        let expr = predgen::random_expr(&mut rng, 5);
        let program = match compile(&expr, &s) {
            Ok(p) => p,
            Err(_) => continue, // out-of-range literal, rejected by contract
        };
        compiled += 1;
        for _ in 0..100 {
            let row = predgen::random_row(&mut rng);
            let view = RowView::full(&s, &row);
            let expected = interpret(&expr, &view).map_err(|e| e.to_string())?;
            let got = evaluate(&program, &view).map_err(|e| e.to_string())?;
            if got != expected {
                return Err(format!("divergence at expr {i}: {expr:?} over {row:?}"));
            }
            checked_pairs += 1;
        }
    }
    if compiled < 9_000 {
        return Err(format!("only {compiled} of 10000 expressions compiled"));
    }
    Ok(format!("{compiled} expressions, {checked_pairs} evaluations, zero divergences"))
}

fn criterion_6() -> Result<String, String> {
    let cluster = lineitem_cluster(base_config());
    let tree = &cluster.tree;
    let mut rng = XorShift64::new(SEED ^ 0xAB);
    let lsn = tree.current_lsn();
    let leaves: Vec<(u64, ndp_core::btree::PageMeta)> =
        tree.directory_snapshot().into_iter().filter(|(_, m)| m.level == 0).collect();
    for i in 0..100 {
        let a = rng.next_range(SCALE / 4) as i64;
        let b = rng.next_range(SCALE / 4) as i64;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let range = match rng.next_range(3) {
            0 => ScanRange {
                low: Bound::Included(vec![Value::Int64(lo)]),
                high: Bound::Included(vec![Value::Int64(hi)]),
            },
            1 => ScanRange { low: Bound::Excluded(vec![Value::Int64(lo)]), high: Bound::Unbounded },
            _ => ScanRange { low: Bound::Unbounded, high: Bound::Excluded(vec![Value::Int64(hi)]) },
        };
        let requested = tree.level1_children_in_range(&range, lsn).map_err(|e| e.to_string())?;
        let oracle: Vec<u64> = leaves
            .iter()
            .filter(|(_, m)| range.intersects(m.low.as_deref(), m.high.as_deref()))
            .map(|(id, _)| *id)
            .collect();
        if requested != oracle {
            return Err(format!(
                "scan {i}: requested {} leaves, oracle says {} (range {range:?})",
                requested.len(),
                oracle.len()
            ));
        }
    }
    Ok("100 random range scans requested exactly the overlapping leaves; zero over-reads".into())
}

fn criterion_7() -> Result<String, String> {
    let report = bench::run_bench(SCALE, SEED, 4, base_config()).map_err(|e| format!("{e:#}"))?;
    let q = |name: &str| report.queries.iter().find(|q| q.name == name).unwrap();
    let q6 = q("Q6");
    let q0 = q("Q0");
    if q6.data_reduction < 0.95 {
        return Err(format!("Q6 data reduction {:.3} < 0.95", q6.data_reduction));
    }
    if q6.cpu_reduction < 0.90 {
        return Err(format!("Q6 local-row reduction {:.3} < 0.90", q6.cpu_reduction));
    }
    if q0.data_reduction < 0.98 {
        return Err(format!("Q0 data reduction {:.3} < 0.98", q0.data_reduction));
    }
    for query in &report.queries {
        if query.data_reduction < 0.0 {
            return Err(format!(
                "{} inflated wire bytes: reduction {:.3}",
                query.name, query.data_reduction
            ));
        }
    }
    Ok(format!(
        "Q6 data {:.1}% (>=95), Q6 local rows {:.1}% (>=90), Q0 data {:.1}% (>=98)",
        q6.data_reduction * 100.0,
        q6.cpu_reduction * 100.0,
        q0.data_reduction * 100.0
    ))
}

fn criterion_8() -> Result<String, String> {
    let throttled = lineitem_cluster(EngineConfig {
        pagestore: PageStoreConfig { ndp_pool_size: 0, ..Default::default() },
        ..base_config()
    });
    let sql = "SELECT SUM(l_extendedprice) FROM lineitem WHERE l_quantity < 30.00";
    let on = run_query(
        &throttled.fresh_run().unwrap(),
        sql,
        QueryFlags { ndp_enabled: true, dop: 1, explain: false },
    )
    .map_err(|e| format!("{e:#}"))?;
    let off = run_query(
        &throttled.fresh_run().unwrap(),
        sql,
        QueryFlags { ndp_enabled: false, dop: 1, explain: false },
    )
    .map_err(|e| format!("{e:#}"))?;
    if on.rows != off.rows {
        return Err("throttled results differ from local execution".into());
    }
    let m = &on.metrics;
    if m.pages.ndp != 0 || m.pages.ndp_empty != 0 {
        return Err(format!("processed pages appeared despite zero capacity: {:?}", m.pages));
    }
    if m.pages.raw != m.pages.total() {
        return Err("page accounting mismatch".into());
    }
    let skipped: u64 = m.per_store.values().map(|s| s.ndp_skipped).sum();
    if skipped != m.pages.raw {
        return Err(format!("skipped counter {} != pages requested {}", skipped, m.pages.raw));
    }
    Ok(format!("{} pages all RAW, skipped counter exact, results unchanged", m.pages.raw))
}

fn criterion_9() -> Result<String, String> {
    // One store; the scan needs at least three batches at this look-ahead.
    let config = EngineConfig {
        compute: ComputeConfig { ndp_max_pages_look_ahead: 64, ..Default::default() },
        pagestores: vec![PageStoreEndpointConfig { id: 0, addr: "inproc".into() }],
        ..base_config()
    };
    let cluster = lineitem_cluster(config).fresh_run().map_err(|e| e.to_string())?;
    let sql = "SELECT COUNT(*) FROM lineitem WHERE l_quantity < 20.00";
    let outcome = run_query(&cluster, sql, QueryFlags::default()).map_err(|e| format!("{e:#}"))?;
    let total_batches = outcome.metrics.pages.total().div_ceil(64);
    if total_batches < 3 {
        return Err(format!("scan only took {total_batches} batches"));
    }
    let store = outcome.metrics.per_store.get(&0).ok_or("no per-store counters reported")?;
    if store.cache_misses != 1 {
        return Err(format!("cache misses {} != 1", store.cache_misses));
    }
    if store.cache_hits < 2 {
        return Err(format!("cache hits {} < 2", store.cache_hits));
    }
    if store.predicate_compilations != 1 {
        return Err(format!(
            "descriptor decode work after the first request: {} compilations",
            store.predicate_compilations
        ));
    }
    Ok(format!(
        "{total_batches} batches: 1 miss, {} hits, 1 descriptor decode total",
        store.cache_hits
    ))
}

fn criterion_10() -> Result<String, String> {
    let look_ahead = 16usize;
    let pool_size = 2usize;
    let config = EngineConfig {
        compute: ComputeConfig {
            buffer_pool_pages: 64,
            ndp_max_pages_look_ahead: look_ahead,
            ndp_push_disabled: false,
        },
        pagestore: PageStoreConfig { ndp_pool_size: pool_size, ..Default::default() },
        ..base_config()
    };
    let cluster = lineitem_cluster(config);
    let mut rng = XorShift64::new(SEED ^ 0xB0B);
    let mut runs = 0;
    for _ in 0..30 {
        runs += 1;
        let sql = random_query(&mut rng);
        let fresh = cluster.fresh_run().map_err(|e| e.to_string())?;
        let dop = 1 + (rng.next_range(2) as usize) * 3;
        let outcome =
            run_query(&fresh, &sql, QueryFlags { ndp_enabled: true, dop, explain: false })
                .map_err(|e| format!("{e:#} [{sql}]"))?;
        if outcome.metrics.ndp_frames_high_water > look_ahead as u64 {
            return Err(format!(
                "cursor NDP frames {} exceeded look-ahead {look_ahead} [{sql}]",
                outcome.metrics.ndp_frames_high_water
            ));
        }
        for node in &fresh.nodes {
            if node.admission.high_water_mark() > pool_size {
                return Err(format!(
                    "store {} ran {} concurrent page tasks, pool size {pool_size}",
                    node.store_id,
                    node.admission.high_water_mark()
                ));
            }
        }
        if fresh.handles.pool.ndp_frames_in_use() != 0 {
            return Err("NDP frames leaked after the scan".into());
        }
    }
    Ok(format!("{runs} fuzz runs: page tasks <= {pool_size}, cursor frames <= {look_ahead}, no leaks"))
}

fn criterion_11() -> Result<String, String> {
    let config = EngineConfig {
        pagestore: PageStoreConfig { service_delay_ms: 1, ..Default::default() },
        pagestores: (0..4).map(|id| PageStoreEndpointConfig { id, addr: "inproc".into() }).collect(),
        ..base_config()
    };
    let cluster = lineitem_cluster(config);
    let sql = "SELECT COUNT(*) FROM lineitem";

    let run_timed = |dop: usize| -> Result<(std::time::Duration, Vec<Vec<Value>>), String> {
        let fresh = cluster.fresh_run().map_err(|e| e.to_string())?;
        let t = Instant::now();
        let outcome = run_query(&fresh, sql, QueryFlags { ndp_enabled: true, dop, explain: false })
            .map_err(|e| format!("{e:#}"))?;
        Ok((t.elapsed(), outcome.rows))
    };

    let (dt1, rows1) = run_timed(1)?;
    let (dt4, rows4) = run_timed(4)?;
    if rows1 != rows4 {
        return Err("parallel run changed the result".into());
    }
    if dt4.as_secs_f64() > 0.5 * dt1.as_secs_f64() {
        return Err(format!("dop4 {dt4:?} > 0.5 x dop1 {dt1:?} under 1 ms per-page latency"));
    }
    Ok(format!("dop1 {dt1:.1?}, dop4 {dt4:.1?} (<= 0.5x)"))
}
