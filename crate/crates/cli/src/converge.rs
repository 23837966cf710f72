use anyhow::{bail, Result};
use balfmm::direct::brute_force;
use balfmm::engine::{FmmConfig, Precision};
use serde::Serialize;

use crate::args::ConvergeArgs;
use crate::run::{execute, load_data, DatasetInfo};

/// Errors below this are treated as round-off when judging monotonicity.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergeRow {
    pub k: u32,
    pub tol: f64,
    pub order: usize,
    /// The order hit the cap before the bound reached `tol`.
    pub capped: bool,
    pub max_relative_error: f64,
    /// `C θ^(Q+1) / (1-θ)²` with the configured `C`.
    pub bound: f64,
    /// `slack * bound`.
    pub limit: f64,
    pub within_limit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergeReport {
    pub command: &'static str,
    pub dataset: DatasetInfo,
    pub config: FmmConfig,
    pub slack: f64,
    pub rows: Vec<ConvergeRow>,
    pub all_within_limit: bool,
    /// Each error is at most its predecessor, or both sit under [`ROUNDOFF_FLOOR`].
    pub envelope_non_increasing: bool,
}

pub fn converge(args: &ConvergeArgs) -> Result<Option<ConvergeReport>> {
    if args.k_max == 0 {
        bail!("--k-max must be at least 1");
    }
    let (sources, targets, dataset) = load_data(&args.data)?;
    let exact = brute_force(&sources, targets.as_deref())?;
    let base = args.fmm.config();
    let mut rows = Vec::new();
    for k in 1..=args.k_max {
        let tol = 10f64.powi(-(k as i32));
        let config = FmmConfig { precision: Precision::Tolerance(tol), ..base };
        let policy = config.policy()?;
        let Some(out) = execute(&sources, targets.as_deref(), &config, &args.fmm)? else {
            return Ok(None);
        };
        let err = out.potentials.max_pointwise_relative(&exact)?;
        let bound = policy.bound();
        let limit = args.slack * bound;
        rows.push(ConvergeRow {
            k,
            tol,
            order: policy.order,
            capped: policy.capped(),
            max_relative_error: err,
            bound,
            limit,
            within_limit: err <= limit,
        });
    }
    let envelope_non_increasing = envelope_non_increasing(&rows.iter().map(|r| r.max_relative_error).collect::<Vec<_>>());
    Ok(Some(ConvergeReport {
        command: "converge",
        dataset,
        config: base,
        slack: args.slack,
        all_within_limit: rows.iter().all(|r| r.within_limit),
        envelope_non_increasing,
        rows,
    }))
}

pub fn envelope_non_increasing(errors: &[f64]) -> bool {
    errors.windows(2).all(|w| w[1] <= w[0] || w[1] <= ROUNDOFF_FLOOR)
}

impl ConvergeReport {
    pub fn summary(&self) -> String {
        let mut s = format!("converge: N={} theta={} slack={}\n", self.dataset.n, self.config.theta, self.slack);
        s += "   k        tol   Q      error      limit\n";
        for r in &self.rows {
            s += &format!(
                "{:>4} {:>10.1e} {:>3} {:>10.3e} {:>10.3e}{}{}\n",
                r.k,
                r.tol,
                r.order,
                r.max_relative_error,
                r.limit,
                if r.within_limit { "" } else { "  EXCEEDS" },
                if r.capped { "  cap" } else { "" }
            );
        }
        s
    }
}
