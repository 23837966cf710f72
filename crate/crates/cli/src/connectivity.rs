use anyhow::{bail, Result};
use balfmm::engine::{connection_census, FmmConfig};
use serde::Serialize;

use crate::args::ConnectivityArgs;
use crate::run::{sources_from, DatasetInfo};

#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityRow {
    pub p: usize,
    pub n_near: u64,
    pub n_far: u64,
    /// `(N_near(P) / P) / N_near(1)`.
    pub c_near: f64,
    /// `(N_far(P) / P) / N_far(1)`.
    pub c_far: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityReport {
    pub command: &'static str,
    pub dataset: DatasetInfo,
    pub base: FmmConfig,
    pub rows: Vec<ConnectivityRow>,
}

pub fn connectivity(args: &ConnectivityArgs) -> Result<ConnectivityReport> {
    let mut ps = args.p.clone();
    if ps.first() != Some(&1) {
        ps.retain(|&p| p != 1);
        ps.insert(0, 1);
    }
    let (sources, dataset) = sources_from(&args.dist, args.n, args.seed, args.points_file.as_ref())?;
    let base = FmmConfig {
        theta: args.theta,
        eta: args.eta,
        levels: args.levels,
        partition: args.partition.into(),
        ..FmmConfig::default()
    };
    let mut rows: Vec<ConnectivityRow> = Vec::new();
    for &p in &ps {
        let census = connection_census(&sources, &FmmConfig { ranks: p, ..base })?;
        let (near1, far1) = rows.first().map_or((census.n_near, census.n_far), |r| (r.n_near, r.n_far));
        if near1 == 0 || far1 == 0 {
            bail!("single-rank run has no near or no far connections; factors are undefined");
        }
        rows.push(ConnectivityRow {
            p,
            n_near: census.n_near,
            n_far: census.n_far,
            c_near: census.n_near as f64 / p as f64 / near1 as f64,
            c_far: census.n_far as f64 / p as f64 / far1 as f64,
            seconds: census.elapsed,
        });
    }
    Ok(ConnectivityReport { command: "connectivity", dataset, base, rows })
}

impl ConnectivityReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "connectivity: N={} L={} theta={} eta={}\n     P      n_near       n_far  C_near  C_far\n",
            self.dataset.n, self.base.levels, self.base.theta, self.base.eta
        );
        for r in &self.rows {
            s += &format!("{:>6} {:>11} {:>11} {:>7.3} {:>6.3}\n", r.p, r.n_near, r.n_far, r.c_near, r.c_far);
        }
        s
    }
}
