//! Command-line driver library: SQL subset parsing and binding, table
//! ingestion, cluster assembly, query execution, and the reduction
//! benchmark. The `ndpdb` binary is a thin wrapper over these modules.

pub mod bench;
pub mod catalog;
pub mod cluster;
pub mod exec;
pub mod gen;
pub mod sqlparse;
