use anyhow::{bail, Result};
use balfmm::engine::{run_memory, run_serial, FmmConfig, Precision, Stage};
use serde::Serialize;

use crate::args::GalaxyEtaArgs;
use crate::run::{argmin, mean, sources_from, DatasetInfo};

#[derive(Debug, Clone, Serialize)]
pub struct EtaRow {
    pub eta: f64,
    /// Critical-path CPU seconds (slowest rank) per repeat.
    pub totals: Vec<f64>,
    pub total: f64,
    /// `(max - min) / mean` of per-rank P2P CPU time, averaged over repeats.
    pub p2p_variance: f64,
    /// Per-rank P2P CPU seconds of the last repeat.
    pub p2p_times: Vec<f64>,
    pub points_per_rank: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GalaxyEtaReport {
    pub command: &'static str,
    pub dataset: DatasetInfo,
    pub base: FmmConfig,
    pub rows: Vec<EtaRow>,
    pub best_eta: f64,
    pub variance_at_best: f64,
    pub variance_at_zero: Option<f64>,
    /// P2P variance at the fastest η does not exceed the variance at η = 0.
    pub best_not_worse_than_zero: Option<bool>,
}

pub fn galaxy_eta(args: &GalaxyEtaArgs) -> Result<GalaxyEtaReport> {
    if args.eta.is_empty() || args.repeats == 0 {
        bail!("need at least one η value and one repeat");
    }
    let (sources, dataset) = sources_from(&args.dist, args.n, args.seed, args.points_file.as_ref())?;
    let base = FmmConfig {
        theta: args.theta,
        levels: args.levels,
        precision: match args.order {
            Some(q) => Precision::Order(q),
            None => Precision::Tolerance(args.tol),
        },
        ranks: args.p,
        partition: args.partition.into(),
        watchdog_secs: args.watchdog,
        ..FmmConfig::default()
    };
    let mut rows = Vec::new();
    for &eta in &args.eta {
        let config = FmmConfig { eta, ..base };
        let mut totals = Vec::new();
        let mut variances = Vec::new();
        let mut last = None;
        for _ in 0..args.repeats {
            let out = if config.ranks == 1 { run_serial(&sources, None, &config)? } else { run_memory(&sources, None, &config)? };
            totals.push(out.report.max_rank_cpu());
            variances.push(out.report.imbalance(Stage::P2P));
            last = Some(out.report);
        }
        let report = last.expect("at least one repeat");
        rows.push(EtaRow {
            eta,
            total: mean(&totals),
            totals,
            p2p_variance: mean(&variances),
            p2p_times: report.stage(Stage::P2P).iter().map(|t| t.cpu).collect(),
            points_per_rank: report.ranks.iter().map(|r| r.sources).collect(),
        });
    }
    let best = argmin(&rows.iter().map(|r| r.total).collect::<Vec<_>>()).expect("non-empty");
    let variance_at_zero = rows.iter().find(|r| r.eta == 0.0).map(|r| r.p2p_variance);
    let variance_at_best = rows[best].p2p_variance;
    Ok(GalaxyEtaReport {
        command: "galaxy-eta",
        dataset,
        base,
        best_eta: rows[best].eta,
        variance_at_best,
        variance_at_zero,
        best_not_worse_than_zero: variance_at_zero.map(|v0| variance_at_best <= v0),
        rows,
    })
}

impl GalaxyEtaReport {
    pub fn summary(&self) -> String {
        let mut s = format!("galaxy-eta: N={} P={} L={}\n   eta     total  p2p-variance\n", self.dataset.n, self.base.ranks, self.base.levels);
        for r in &self.rows {
            s += &format!("{:>6} {:>8.3}s {:>12.4}\n", r.eta, r.total, r.p2p_variance);
        }
        s += &format!("fastest eta {} with P2P variance {:.4}\n", self.best_eta, self.variance_at_best);
        s
    }
}
