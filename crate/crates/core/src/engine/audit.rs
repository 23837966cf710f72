use serde::{Deserialize, Serialize};

use super::FmmConfig;
use crate::error::{FmmError, Result};
use crate::geometry::{bounding_box, partition_in, Connection, Source};
use crate::transport::{memory_cluster, run_ranks};
use crate::treebuild::{build_connectivity, build_halos, build_local_tree, ConnectivityMatrix, HaloMatrix, LocalTree};

/// How often each ordered source pair is reached by the far and near fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageAudit {
    pub sources: usize,
    /// Ordered pairs `(target, source)`, `target != source`.
    pub ordered_pairs: u64,
    pub covered_by_far: u64,
    pub covered_by_near: u64,
    pub missing: u64,
    pub duplicated: u64,
}

impl CoverageAudit {
    pub fn is_exact(&self) -> bool {
        self.missing == 0 && self.duplicated == 0
    }
}

struct RankStructures {
    tree: LocalTree,
    conn: ConnectivityMatrix,
    halos: Vec<HaloMatrix>,
}

/// Rebuilds the trees, connectivity and halos of a run and tags every
/// interaction the engine would perform, at the level it would perform it.
pub fn audit_pair_coverage(sources: &[Source], config: &FmmConfig) -> Result<CoverageAudit> {
    config.validate()?;
    let n = sources.len();
    if n > 5000 {
        return Err(FmmError::InvalidParameter(format!("coverage audit limited to 5000 sources, got {n}")));
    }
    let global = bounding_box(sources)?;
    let part = partition_in(global, sources, config.ranks, config.partition, config.eta)?;
    let params = config.split_params()?;
    let ranks = run_ranks(memory_cluster(config.ranks), |mut ep| -> Result<RankStructures> {
        let p = ep.rank();
        let tree = build_local_tree(p, &part.rank_sources[p], part.rank_boxes[p], params);
        let conn = build_connectivity(&tree, config.theta);
        let halos = build_halos(&tree, &mut ep, config.theta, config.halo_wait, |_| {})?;
        Ok(RankStructures { tree, conn, halos })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut ids: Vec<u64> = sources.iter().map(|s| s.global_id).collect();
    ids.sort_unstable();
    let pos = |id: u64| ids.binary_search(&id).expect("known id");
    let mut count = vec![0u8; n * n];
    let (mut far, mut near) = (0u64, 0u64);
    let box_ids = |r: &RankStructures, l: usize, i: usize| -> Vec<usize> {
        r.tree.sources[r.tree.ranges_at(l)[i].clone()].iter().map(|s| pos(s.global_id)).collect()
    };
    let mut tag = |targets: &[usize], srcs: &[usize], hits: &mut u64| {
        for &t in targets {
            for &s in srcs {
                if t != s {
                    let c = &mut count[t * n + s];
                    *c = c.saturating_add(1);
                    *hits += 1;
                }
            }
        }
    };
    let levels = config.levels;
    for (p, r) in ranks.iter().enumerate() {
        for l in 1..=levels {
            for (i, j, kind) in r.conn.level(l).entries() {
                let (a, b) = (box_ids(r, l, i), box_ids(r, l, j));
                match kind {
                    Connection::Weak => tag(&a, &b, &mut far),
                    Connection::Strong if l == levels && i <= j => {
                        tag(&a, &b, &mut near);
                        if i != j {
                            tag(&b, &a, &mut near);
                        }
                    }
                    _ => {}
                }
            }
            for (qr, h) in r.halos.iter().enumerate() {
                if qr == p {
                    continue;
                }
                let lv = h.level(l);
                for (i, j) in lv.weak_pairs() {
                    tag(&box_ids(r, l, i), &box_ids(&ranks[qr], l, j), &mut far);
                }
                if l == levels {
                    for (i, j) in lv.strong_pairs() {
                        tag(&box_ids(r, l, i), &box_ids(&ranks[qr], l, j), &mut near);
                    }
                }
            }
        }
    }
    let mut missing = 0;
    let mut duplicated = 0;
    for t in 0..n {
        for s in 0..n {
            if t == s {
                continue;
            }
            match count[t * n + s] {
                0 => missing += 1,
                1 => {}
                _ => duplicated += 1,
            }
        }
    }
    Ok(CoverageAudit {
        sources: n,
        ordered_pairs: (n * n.saturating_sub(1)) as u64,
        covered_by_far: far,
        covered_by_near: near,
        missing,
        duplicated,
    })
}
