use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::FmmConfig;
use crate::error::{FmmError, Result};
use crate::geometry::{bounding_box, partition_in, Connection, Source};
use crate::transport::{memory_cluster, run_ranks};
use crate::treebuild::{build_connectivity, build_halos, build_local_tree, ConnectivityMatrix, HaloMatrix};

/// Connection totals seen by one rank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionCounts {
    /// Ordered leaf pairs handled by P2P, self pairs included.
    pub n_near: u64,
    /// Ordered box pairs handled by M2L, all levels.
    pub n_far: u64,
    pub n_near_halo: u64,
    pub n_far_halo: u64,
}

impl ConnectionCounts {
    pub(crate) fn tally(conn: &ConnectivityMatrix, halos: &[HaloMatrix], rank: usize, levels: usize) -> Self {
        let peers = || halos.iter().enumerate().filter(move |(q, _)| *q != rank).map(|(_, h)| h);
        let n_near_halo = peers().map(|h| h.level(levels).n_strong as u64).sum();
        let n_far_halo = peers().flat_map(|h| h.levels.iter().map(|l| l.n_weak as u64)).sum();
        Self {
            n_near: conn.count(levels, Connection::Strong) as u64 + n_near_halo,
            n_far: (1..=levels).map(|l| conn.count(l, Connection::Weak) as u64).sum::<u64>() + n_far_halo,
            n_near_halo,
            n_far_halo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionCensus {
    pub config: FmmConfig,
    pub ranks: Vec<ConnectionCounts>,
    pub n_near: u64,
    pub n_far: u64,
    pub elapsed: f64,
}

/// Builds trees, connectivity and halos on an in-memory cluster without
/// computing any expansions.
pub fn connection_census(sources: &[Source], config: &FmmConfig) -> Result<ConnectionCensus> {
    config.validate()?;
    if sources.is_empty() {
        return Err(FmmError::EmptyInput("sources"));
    }
    let started = Instant::now();
    let global = bounding_box(sources)?;
    let part = partition_in(global, sources, config.ranks, config.partition, config.eta)?;
    let params = config.split_params()?;
    let ranks = run_ranks(memory_cluster(config.ranks), |mut ep| -> Result<ConnectionCounts> {
        let p = ep.rank();
        let tree = build_local_tree(p, &part.rank_sources[p], part.rank_boxes[p], params);
        let conn = build_connectivity(&tree, config.theta);
        let halos = build_halos(&tree, &mut ep, config.theta, config.halo_wait, |_| {})?;
        Ok(ConnectionCounts::tally(&conn, &halos, p, config.levels))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ConnectionCensus {
        config: *config,
        n_near: ranks.iter().map(|r| r.n_near).sum(),
        n_far: ranks.iter().map(|r| r.n_far).sum(),
        ranks,
        elapsed: started.elapsed().as_secs_f64(),
    })
}
