use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::FmmConfig;
use crate::transport::TrafficCount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Alloc,
    Tree,
    P2M,
    M2M,
    M2Lh,
    M2L,
    L2L,
    L2P,
    P2P,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Alloc,
        Stage::Tree,
        Stage::P2M,
        Stage::M2M,
        Stage::M2Lh,
        Stage::M2L,
        Stage::L2L,
        Stage::L2P,
        Stage::P2P,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Alloc => "Alloc",
            Stage::Tree => "Tree",
            Stage::P2M => "P2M",
            Stage::M2M => "M2M",
            Stage::M2Lh => "M2Lh",
            Stage::M2L => "M2L",
            Stage::L2L => "L2L",
            Stage::L2P => "L2P",
            Stage::P2P => "P2P",
        }
    }
}

/// CPU time consumed by the calling thread.
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer and the clock id is supported on Linux.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    /// Elapsed seconds.
    pub wall: f64,
    /// Seconds of this rank's own CPU time.
    pub cpu: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub rank: usize,
    pub stages: BTreeMap<Stage, StageTiming>,
    pub sources: usize,
    pub targets: usize,
    pub leaf_points: LeafStats,
    /// Leaf-level strong pairs, local and cross-rank, ordered.
    pub n_near: u64,
    /// Weak pairs over all levels, local and cross-rank, ordered.
    pub n_far: u64,
    pub n_near_halo: u64,
    pub n_far_halo: u64,
    pub m2l_shifts: u64,
    pub m2lh_shifts: u64,
    /// Messages and bytes sent, by stage name.
    pub messages: BTreeMap<String, TrafficCount>,
}

impl StageReport {
    pub fn time(&self, stage: Stage) -> StageTiming {
        self.stages.get(&stage).copied().unwrap_or_default()
    }

    pub fn total_cpu(&self) -> f64 {
        self.stages.values().map(|t| t.cpu).sum()
    }

    pub fn total_wall(&self) -> f64 {
        self.stages.values().map(|t| t.wall).sum()
    }
}

/// Accumulates wall and CPU time per stage across disjoint intervals.
#[derive(Debug)]
pub(crate) struct StageClock {
    pub(crate) stages: BTreeMap<Stage, StageTiming>,
    current: Option<(Stage, Instant, f64)>,
}

impl StageClock {
    pub(crate) fn new() -> Self {
        let stages = Stage::ALL.iter().map(|&s| (s, StageTiming::default())).collect();
        Self { stages, current: None }
    }

    pub(crate) fn enter(&mut self, stage: Stage) {
        self.stop();
        self.current = Some((stage, Instant::now(), thread_cpu_seconds()));
    }

    pub(crate) fn stop(&mut self) {
        if let Some((stage, wall, cpu)) = self.current.take() {
            let t = self.stages.entry(stage).or_default();
            t.wall += wall.elapsed().as_secs_f64();
            t.cpu += thread_cpu_seconds() - cpu;
        }
    }
}

/// Whole-run summary across ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: FmmConfig,
    pub order: usize,
    pub bound: f64,
    pub capped: bool,
    pub ranks: Vec<StageReport>,
    pub n_near: u64,
    pub n_far: u64,
    /// Launcher wall time, seconds.
    pub elapsed: f64,
}

impl RunReport {
    pub fn new(config: FmmConfig, ranks: Vec<StageReport>, elapsed: f64) -> Self {
        let policy = config.policy().expect("validated config");
        Self {
            order: policy.order,
            bound: policy.bound(),
            capped: policy.capped(),
            n_near: ranks.iter().map(|r| r.n_near).sum(),
            n_far: ranks.iter().map(|r| r.n_far).sum(),
            ranks,
            config,
            elapsed,
        }
    }

    /// Per-rank values of one stage.
    pub fn stage(&self, stage: Stage) -> Vec<StageTiming> {
        self.ranks.iter().map(|r| r.time(stage)).collect()
    }

    /// Critical-path estimate: the slowest rank's CPU time summed over stages.
    pub fn max_rank_cpu(&self) -> f64 {
        self.ranks.iter().map(StageReport::total_cpu).fold(0.0, f64::max)
    }

    pub fn total_cpu(&self) -> f64 {
        self.ranks.iter().map(StageReport::total_cpu).sum()
    }

    /// `(max - min) / mean` of per-rank CPU time in `stage`.
    pub fn imbalance(&self, stage: Stage) -> f64 {
        let v: Vec<f64> = self.ranks.iter().map(|r| r.time(stage).cpu).collect();
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let max = v.iter().copied().fold(f64::MIN, f64::max);
        let min = v.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / mean
    }
}
