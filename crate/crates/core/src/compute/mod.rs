//! Compute-side scan execution: the buffer pool with its private NDP
//! area, version resolution for ambiguous records, the pushdown-aware
//! index scan cursor, aggregation finalization, and parallel scans.

pub mod agg;
pub mod buffer_pool;
pub mod cursor;
pub mod pq;
pub mod resolve;

pub use agg::{AggOutput, AggPlan, AggPlanError, OutputAgg};
pub use buffer_pool::BufferPool;
pub use cursor::{EngineHandles, NdpScanCursor, ScanError, ScanOutput, ScanSpec};
pub use pq::pq_execute;
pub use resolve::{resolve_ambiguous, ResolveError};
