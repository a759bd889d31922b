//! Engine assembly: one table, its page stores (in-process or remote),
//! the SAL client, buffer pool, and transaction manager.

use crate::catalog::{open_table, Manifest};
use anyhow::{bail, Context, Result};
use ndp_core::btree::BTree;
use ndp_core::compute::{BufferPool, EngineHandles};
use ndp_core::config::EngineConfig;
use ndp_core::mvcc::TxnManager;
use ndp_core::pagestore::PageStoreNode;
use ndp_core::sal::{Endpoint, SalClient, SliceMap};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

pub struct Cluster {
    pub manifest: Manifest,
    pub tree: Arc<BTree>,
    pub handles: EngineHandles,
    /// In-process stores, when any (empty for all-remote clusters).
    pub nodes: Vec<Arc<PageStoreNode>>,
    pub txns: Arc<TxnManager>,
    pub config: EngineConfig,
}

/// Contiguous slice-to-store assignment: each store serves a run of
/// adjacent slices, so sequential scans engage stores one after another
/// and parallel scans overlap them.
pub fn assign_slices(slice_ids: &[u32], store_ids: &[u32]) -> HashMap<u32, u32> {
    let mut map = HashMap::new();
    if store_ids.is_empty() {
        return map;
    }
    for (i, &slice) in slice_ids.iter().enumerate() {
        let k = i * store_ids.len() / slice_ids.len().max(1);
        map.insert(slice, store_ids[k.min(store_ids.len() - 1)]);
    }
    map
}

impl Cluster {
    /// Opens a persisted table and stands up the configured cluster. An
    /// empty endpoint list gets one in-process store per four slices.
    pub fn open(slices_dir: &Path, config: EngineConfig) -> Result<Cluster> {
        let (manifest, tree, _page_to_slice) = open_table(slices_dir)?;
        Cluster::over_tree(manifest, tree, config)
    }

    /// Builds the cluster around an already-open tree (shared live store
    /// for in-process nodes).
    pub fn over_tree(manifest: Manifest, tree: Arc<BTree>, config: EngineConfig) -> Result<Cluster> {
        let slice_ids = tree.slice_ids();
        let endpoints_cfg: Vec<(u32, String)> = if config.pagestores.is_empty() {
            let n = (slice_ids.len().div_ceil(4)).clamp(1, 4) as u32;
            (0..n).map(|id| (id, "inproc".to_string())).collect()
        } else {
            config.pagestores.iter().map(|e| (e.id, e.addr.clone())).collect()
        };

        let mut endpoints = HashMap::new();
        let mut nodes = Vec::new();
        for (id, addr) in &endpoints_cfg {
            if addr == "inproc" {
                let node =
                    PageStoreNode::new(*id, tree.store().clone(), None, config.pagestore.clone());
                endpoints.insert(*id, Endpoint::InProc(node.clone()));
                nodes.push(node);
            } else {
                endpoints.insert(*id, Endpoint::Tcp(addr.clone()));
            }
        }
        if endpoints.is_empty() {
            bail!("cluster config lists no page stores");
        }

        let store_ids: Vec<u32> = endpoints_cfg.iter().map(|(id, _)| *id).collect();
        let slice_to_store = assign_slices(&slice_ids, &store_ids);
        let sal = Arc::new(SalClient::new(
            endpoints,
            SliceMap { router: tree.as_slice_router(), slice_to_store },
        ));
        let pool = BufferPool::new(config.compute.buffer_pool_pages);
        Ok(Cluster {
            manifest,
            tree: tree.clone(),
            handles: EngineHandles { tree, sal, pool, compute: config.compute.clone() },
            nodes,
            txns: Arc::new(TxnManager::new()),
            config,
        })
    }

    /// A fresh execution environment over the same data: new page stores
    /// (cold descriptor caches and counters), new SAL, cold buffer pool.
    /// Benchmark runs use this so configurations never warm each other.
    pub fn fresh_run(&self) -> Result<Cluster> {
        Cluster::over_tree(self.manifest.clone(), self.tree.clone(), self.config.clone())
    }

    pub fn schema(&self) -> &ndp_core::schema::Schema {
        &self.tree.schema
    }
}

/// Runs a page-store server over the slices in a directory, blocking.
pub fn serve_pagestore(slices_dir: &Path, listen: &str, config: EngineConfig) -> Result<()> {
    let store = Arc::new(ndp_core::btree::PageVersionStore::new());
    let owned = crate::catalog::load_slices(slices_dir, &store)?;
    let n_pages = owned.len();
    let node = PageStoreNode::new(0, store, Some(owned), config.pagestore.clone());
    let listener = std::net::TcpListener::bind(listen)
        .with_context(|| format!("binding {listen}"))?;
    eprintln!("serving {n_pages} pages from {} on {listen}", slices_dir.display());
    node.serve_tcp(listener)?;
    Ok(())
}
