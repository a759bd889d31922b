//! A desk-scale database engine with separated compute and storage that
//! pushes selection, projection, and aggregation from the compute node's
//! index scan into the page-store nodes holding the data.
//!
//! Layering, bottom up:
//!
//! - [`value`], [`schema`], [`record`], [`page`]: the bit-exact page and
//!   record formats both sides share.
//! - [`predicate`]: predicate trees compiled to a portable stack bytecode
//!   that evaluates identically on either side of the wire.
//! - [`btree`], [`mvcc`]: the clustered B+-tree over versioned pages, undo
//!   logging, and read views.
//! - [`descriptor`], [`wire`]: the per-table pushdown contract and the
//!   length-prefixed frame protocol.
//! - [`pagestore`]: the storage-side service running the pushdown pipeline
//!   (visibility, filter, project, aggregate) as best-effort work.
//! - [`sal`]: the storage abstraction layer client that routes batch reads
//!   to page stores by slice and merges result streams.
//! - [`compute`]: the pushdown-aware index-scan cursor, buffer pool,
//!   ambiguous-record resolution, aggregation merge, and parallel scans.
//! - [`planner`]: plan post-processing that decides, per table access,
//!   which pushdowns to enable.

pub mod aggregate;
pub mod btree;
pub mod compute;
pub mod config;
pub mod descriptor;
pub mod metrics;
pub mod mvcc;
pub mod page;
pub mod pagestore;
pub mod planner;
pub mod predicate;
pub mod record;
pub mod sal;
pub mod schema;
pub mod testkit;
pub mod util;
pub mod value;
pub mod wire;
