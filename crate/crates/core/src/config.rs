//! Engine configuration. The cluster config file is JSON with one object
//! per subsystem, realizing the `pagestore.*`, `compute.*`, and planner
//! keys, plus the page-store endpoint list.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PageStoreConfig {
    /// Concurrent NDP page tasks allowed per store (`pagestore.ndp_pool_size`).
    pub ndp_pool_size: usize,
    /// Longest an NDP page task waits for a pool slot before the page is
    /// returned raw (`pagestore.ndp_max_wait_ms`).
    pub ndp_max_wait_ms: u64,
    /// Decoded-descriptor cache entries (`pagestore.descriptor_cache_capacity`).
    pub descriptor_cache_capacity: usize,
    /// Test hook: probability in [0,1] that an otherwise-admittable page is
    /// skipped anyway, with a seeded generator.
    pub skip_probability: f64,
    pub skip_seed: u64,
    /// Test hook: injected per-page service latency in milliseconds.
    pub service_delay_ms: u64,
}

impl Default for PageStoreConfig {
    fn default() -> Self {
        PageStoreConfig {
            ndp_pool_size: 4,
            ndp_max_wait_ms: 100,
            descriptor_cache_capacity: 64,
            skip_probability: 0.0,
            skip_seed: 1,
            service_delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeConfig {
    /// Buffer pool frames (`compute.buffer_pool_pages`).
    pub buffer_pool_pages: usize,
    /// Batch-read size and the NDP memory budget per cursor
    /// (`compute.ndp_max_pages_look_ahead`).
    pub ndp_max_pages_look_ahead: usize,
    /// When set, scans never request pushdown even if planned
    /// (`compute.ndp_push_disabled`).
    pub ndp_push_disabled: bool,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        ComputeConfig {
            buffer_pool_pages: 1024,
            ndp_max_pages_look_ahead: 64,
            ndp_push_disabled: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Pushdown is considered only when the access is estimated to read at
    /// least this many pages.
    pub ndp_min_io_pages: u64,
    /// Column projection is pushed when the projected width is at most
    /// `(1 - min_width_reduction)` of the full width.
    pub min_width_reduction: f64,
    /// Predicates are pushed when their combined filter factor is at most
    /// this.
    pub max_pushdown_ff: f64,
    /// Placeholder filter factors used when no histogram exists.
    pub ff_equality: f64,
    pub ff_range: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            ndp_min_io_pages: 64,
            min_width_reduction: 0.2,
            max_pushdown_ff: 0.5,
            ff_equality: 0.1,
            ff_range: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageStoreEndpointConfig {
    pub id: u32,
    /// `host:port`, or the literal `inproc` to run the store inside the
    /// client process.
    pub addr: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub page_size: usize,
    pub fill_factor: f64,
    pub slice_size_pages: u64,
    pub pagestore: PageStoreConfig,
    pub compute: ComputeConfig,
    pub planner: PlannerConfig,
    /// Endpoints; empty means one in-process store per slice group of four.
    pub pagestores: Vec<PageStoreEndpointConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            page_size: crate::page::DEFAULT_PAGE_SIZE,
            fill_factor: 0.9,
            slice_size_pages: 256,
            pagestore: PageStoreConfig::default(),
            compute: ComputeConfig::default(),
            planner: PlannerConfig::default(),
            pagestores: Vec::new(),
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<EngineConfig, serde_json::Error> {
        serde_json::from_str(text)
    }
}
