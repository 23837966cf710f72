use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use balfmm::direct::brute_force;
use balfmm::engine::{FmmConfig, RunReport, Stage};
use serde::Serialize;

use crate::args::{Backend, EvalArgs};
use crate::run::{execute, load_data, DatasetInfo};

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub stage: &'static str,
    pub max_cpu: f64,
    pub max_wall: f64,
    /// (max - min) / mean of per-rank CPU time.
    pub imbalance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub max_relative_error: f64,
    pub relative_inf_error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub command: &'static str,
    pub dataset: DatasetInfo,
    pub backend: Backend,
    pub config: FmmConfig,
    pub order: usize,
    pub bound: f64,
    pub capped: bool,
    pub n_near: u64,
    pub n_far: u64,
    /// Wall seconds of each repeat.
    pub elapsed: Vec<f64>,
    pub stages: Vec<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub run: RunReport,
}

pub fn stage_summaries(run: &RunReport) -> Vec<StageSummary> {
    Stage::ALL
        .iter()
        .map(|&s| {
            let t = run.stage(s);
            StageSummary {
                stage: s.name(),
                max_cpu: t.iter().map(|x| x.cpu).fold(0.0, f64::max),
                max_wall: t.iter().map(|x| x.wall).fold(0.0, f64::max),
                imbalance: run.imbalance(s),
            }
        })
        .collect()
}

/// `None` on non-zero ranks of a multi-process roster.
pub fn eval(args: &EvalArgs) -> Result<Option<EvalReport>> {
    let (sources, targets, dataset) = load_data(&args.data)?;
    let config = args.fmm.config();
    let mut elapsed = Vec::new();
    let mut last = None;
    for _ in 0..args.repeats.max(1) {
        let Some(out) = execute(&sources, targets.as_deref(), &config, &args.fmm)? else {
            return Ok(None);
        };
        elapsed.push(out.report.elapsed);
        last = Some(out);
    }
    let out = last.expect("at least one repeat");
    let oracle = if args.check_oracle {
        let started = Instant::now();
        let exact = brute_force(&sources, targets.as_deref())?;
        Some(OracleCheck {
            max_relative_error: out.potentials.max_pointwise_relative(&exact)?,
            relative_inf_error: out.potentials.relative_inf_diff(&exact)?,
            seconds: started.elapsed().as_secs_f64(),
        })
    } else {
        None
    };
    if let Some(path) = &args.out {
        out.potentials.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    let run = out.report;
    Ok(Some(EvalReport {
        command: "eval",
        dataset,
        backend: args.fmm.backend,
        config,
        order: run.order,
        bound: run.bound,
        capped: run.capped,
        n_near: run.n_near,
        n_far: run.n_far,
        elapsed,
        stages: stage_summaries(&run),
        oracle,
        out: args.out.clone(),
        run,
    }))
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "eval: N={} P={} L={} theta={} eta={} Q={}{} near={} far={} elapsed={:.3}s\n",
            self.dataset.n,
            self.config.ranks,
            self.config.levels,
            self.config.theta,
            self.config.eta,
            self.order,
            if self.capped { " (cap)" } else { "" },
            self.n_near,
            self.n_far,
            self.elapsed.last().copied().unwrap_or(0.0)
        );
        for st in &self.stages {
            s += &format!("  {:<5} cpu {:>9.4}s  imbalance {:.3}\n", st.stage, st.max_cpu, st.imbalance);
        }
        if let Some(o) = &self.oracle {
            s += &format!("  oracle: max relative error {:.3e}\n", o.max_relative_error);
        }
        s
    }
}
