//! End-to-end evaluation: upward pass, downward pass and evaluation, serial
//! or over `P` ranks.

mod audit;
mod census;
mod launch;
mod rank;
mod report;

pub use audit::{audit_pair_coverage, CoverageAudit};
pub use census::{connection_census, ConnectionCensus, ConnectionCounts};
pub use launch::{gather_potentials, run_memory, run_on_endpoints, run_roster, run_serial, run_tcp_local, RunOutput};
pub use rank::{run_distributed, RankInput, RankOutput};
pub use report::{thread_cpu_seconds, LeafStats, RunReport, Stage, StageReport, StageTiming};

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::{check_theta, integer_cube_root, PartitionScheme};
use crate::harmonics::{M2lForm, PrecisionPolicy};
use crate::treebuild::{HaloWait, SplitParams};

/// How the expansion order is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Precision {
    /// Smallest order whose truncation bound meets the tolerance.
    Tolerance(f64),
    /// Fixed order.
    Order(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmmConfig {
    pub theta: f64,
    pub eta: f64,
    pub levels: usize,
    pub precision: Precision,
    pub bound_constant: f64,
    pub ranks: usize,
    pub partition: PartitionScheme,
    pub halo_wait: HaloWait,
    pub m2l: M2lForm,
    /// Idle seconds before a blocked receive fails.
    pub watchdog_secs: f64,
}

impl Default for FmmConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            eta: 0.5,
            levels: 3,
            precision: Precision::Tolerance(1e-6),
            bound_constant: 1.0,
            ranks: 1,
            partition: PartitionScheme::CubicGrid,
            halo_wait: HaloWait::RankOrder,
            m2l: M2lForm::Rotation,
            watchdog_secs: 60.0,
        }
    }
}

impl FmmConfig {
    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        SplitParams::new(self.eta, self.levels)?;
        self.policy()?;
        if self.ranks == 0 {
            return Err(FmmError::InvalidParameter("rank count must be at least 1".into()));
        }
        let ok = match self.partition {
            PartitionScheme::CubicGrid => integer_cube_root(self.ranks).is_some(),
            PartitionScheme::RecursiveBisection => self.ranks.is_power_of_two(),
        };
        if !ok {
            return Err(FmmError::IncompatibleRankCount { ranks: self.ranks, scheme: self.partition.name() });
        }
        if !(self.watchdog_secs > 0.0) {
            return Err(FmmError::InvalidParameter("watchdog must be positive".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<PrecisionPolicy> {
        match self.precision {
            Precision::Tolerance(tol) => PrecisionPolicy::new(tol, self.theta, self.bound_constant),
            Precision::Order(q) => PrecisionPolicy::with_order(q, self.theta, self.bound_constant),
        }
    }

    pub fn split_params(&self) -> Result<SplitParams> {
        SplitParams::new(self.eta, self.levels)
    }

    /// FNV-1a digest of every field that must agree across ranks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&self.theta.to_le_bytes());
        eat(&self.eta.to_le_bytes());
        eat(&(self.levels as u64).to_le_bytes());
        match self.precision {
            Precision::Tolerance(t) => {
                eat(&[0]);
                eat(&t.to_le_bytes());
            }
            Precision::Order(q) => {
                eat(&[1]);
                eat(&(q as u64).to_le_bytes());
            }
        }
        eat(&self.bound_constant.to_le_bytes());
        eat(&(self.ranks as u64).to_le_bytes());
        eat(&[self.partition as u8, self.halo_wait as u8, self.m2l as u8]);
        h
    }

    /// Single-rank configuration that builds the same boxes as this one,
    /// when one exists: `8^k` ranks whose level-1 boxes are the level-`k+1`
    /// boxes of a serial tree (bisection partitions, or the cubic grid at
    /// η = 0).
    pub fn serial_equivalent(&self) -> Option<FmmConfig> {
        let mut k = 0;
        let mut p = self.ranks;
        while p > 1 && p.is_multiple_of(8) {
            p /= 8;
            k += 1;
        }
        if p != 1 {
            return None;
        }
        let same_planes = match self.partition {
            PartitionScheme::RecursiveBisection => true,
            PartitionScheme::CubicGrid => self.eta == 0.0,
        };
        same_planes.then(|| FmmConfig { ranks: 1, levels: self.levels + k, ..*self })
    }
}
