use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ndp_cli::exec::QueryFlags;
use ndp_cli::{bench, catalog, cluster, exec, gen, sqlparse};
use ndp_core::btree::BTreeConfig;
use ndp_core::config::EngineConfig;
use std::path::PathBuf;

/// Desk-scale disaggregated engine with storage-side query pushdown.
#[derive(Parser)]
#[command(name = "ndpdb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Cluster config JSON (page-store endpoints plus pagestore.*,
    /// compute.*, and planner keys). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<EngineConfig> {
        match &self.config {
            None => Ok(EngineConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                EngineConfig::from_json(&text).context("parsing cluster config")
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV into a slice directory.
    Load {
        /// Table schema (JSON).
        #[arg(long)]
        schema: PathBuf,
        /// CSV data, one row per line, no header.
        #[arg(long)]
        csv: PathBuf,
        /// Output directory for slice files and the manifest.
        #[arg(long)]
        slices: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Run one SQL statement against a loaded table.
    Query {
        #[arg(long)]
        sql: String,
        /// Slice directory produced by `load`.
        #[arg(long)]
        slices: PathBuf,
        /// Request storage-side pushdown (on) or force local execution (off).
        #[arg(long, default_value = "on")]
        ndp: String,
        /// Parallel-query worker count.
        #[arg(long, default_value_t = 1)]
        pq: usize,
        /// Print the plan (including pushdown decisions) and exit.
        #[arg(long, default_value_t = false)]
        explain: bool,
        /// Cluster config JSON.
        #[arg(long)]
        cluster: Option<PathBuf>,
        /// Print per-query metrics to stderr.
        #[arg(long, default_value_t = false)]
        metrics: bool,
    },
    /// Serve the slices in a directory to remote compute nodes.
    ServePagestore {
        #[arg(long)]
        slices: PathBuf,
        #[arg(long)]
        listen: String,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Run the reduction benchmark on generated data.
    Bench {
        /// Profile name; only `tpch-mini` exists.
        profile: String,
        /// Row count to generate.
        #[arg(long, default_value_t = 100_000)]
        scale: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Parallel-query workers for the NDP+PQ runs.
        #[arg(long, default_value_t = 4)]
        pq: usize,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Generate tpch-mini rows as CSV (for the load path).
    GenCsv {
        #[arg(long, default_value_t = 100_000)]
        scale: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile a predicate and print its bytecode listing.
    Disasm {
        /// Table schema (JSON).
        #[arg(long)]
        schema: PathBuf,
        /// Predicate text, as it would appear after WHERE.
        #[arg(long = "where", value_name = "PREDICATE")]
        where_text: String,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(classify_exit(&e));
        }
    }
}

/// Exit codes: 1 for user errors, 2 for internal invariant violations.
fn classify_exit(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(scan) = cause.downcast_ref::<ndp_core::compute::ScanError>() {
            if matches!(
                scan,
                ndp_core::compute::ScanError::Protocol(_) | ndp_core::compute::ScanError::Unordered
            ) {
                return 2;
            }
        }
        if cause.downcast_ref::<ndp_core::btree::BTreeError>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Load { schema, csv, slices, config } => {
            let config = config.load()?;
            let schema: ndp_core::schema::Schema = serde_json::from_str(
                &std::fs::read_to_string(&schema)
                    .with_context(|| format!("reading {}", schema.display()))?,
            )
            .context("parsing schema JSON")?;
            schema.validate()?;
            let rows = catalog::read_csv(&csv, &schema)?;
            let n = rows.len();
            let manifest = catalog::load_table(
                schema,
                rows,
                BTreeConfig {
                    page_size: config.page_size,
                    fill_factor: config.fill_factor,
                    slice_size_pages: config.slice_size_pages,
                },
                &slices,
            )?;
            println!(
                "loaded {} rows into {} ({} slices, {} pages)",
                n,
                slices.display(),
                catalog::slice_ids_in_dir(&slices)?.len(),
                manifest.next_page_id - 1,
            );
            Ok(())
        }
        Command::Query { sql, slices, ndp, pq, explain, cluster: cfg, metrics } => {
            let config = ConfigArg { config: cfg }.load()?;
            let cluster = cluster::Cluster::open(&slices, config)?;
            let flags = QueryFlags {
                ndp_enabled: match ndp.as_str() {
                    "on" => true,
                    "off" => false,
                    other => anyhow::bail!("--ndp must be on or off, got {other:?}"),
                },
                dop: pq.max(1),
                explain,
            };
            let outcome = exec::run_query(&cluster, &sql, flags)?;
            if explain {
                for line in &outcome.explain {
                    println!("{line}");
                }
                return Ok(());
            }
            print!("{}", exec::render_table(&outcome));
            if metrics {
                eprintln!("{}", serde_json::to_string_pretty(&outcome.metrics)?);
            }
            Ok(())
        }
        Command::ServePagestore { slices, listen, config } => {
            cluster::serve_pagestore(&slices, &listen, config.load()?)
        }
        Command::Bench { profile, scale, seed, pq, report, config } => {
            anyhow::ensure!(profile == "tpch-mini", "unknown profile {profile:?}");
            let report_data = bench::run_bench(scale, seed, pq, config.load()?)?;
            print!("{}", bench::render_report(&report_data));
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_vec_pretty(&report_data)?)?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::GenCsv { scale, seed, out } => {
            let rows = gen::generate(scale, seed);
            gen::write_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Disasm { schema, where_text } => {
            let schema: ndp_core::schema::Schema =
                serde_json::from_str(&std::fs::read_to_string(&schema)?)
                    .context("parsing schema JSON")?;
            let sql = format!("SELECT * FROM {} WHERE {}", schema.table_name, where_text);
            let parsed = sqlparse::parse(&sql)?;
            let raw = parsed
                .where_expr
                .ok_or_else(|| anyhow::anyhow!("no predicate given"))?;
            let expr = sqlparse::bind_expr(&raw, &schema)?;
            let program = ndp_core::predicate::compile(&expr, &schema)?;
            print!("{}", program.disassemble());
            Ok(())
        }
    }
}
