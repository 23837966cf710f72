use std::path::PathBuf;

use balfmm::engine::{FmmConfig, Precision};
use balfmm::harmonics::M2lForm;
use balfmm::{HaloWait, PartitionScheme};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "balfmm", version, about = "Balanced-tree FMM benchmark driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate potentials for one configuration.
    Eval(EvalArgs),
    /// Error against the direct sum for tolerances 10^-1 .. 10^-k.
    Converge(ConvergeArgs),
    /// One-at-a-time parameter sweeps around the defaults.
    Sweep(SweepArgs),
    /// Near/far connection growth with the rank count (tree only).
    Connectivity(ConnectivityArgs),
    /// Total time and P2P imbalance against η on a galaxy.
    GalaxyEta(GalaxyEtaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Memory,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Cubic,
    Orb,
}

impl From<PartitionArg> for PartitionScheme {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Cubic => PartitionScheme::CubicGrid,
            PartitionArg::Orb => PartitionScheme::RecursiveBisection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum M2lArg {
    Rotation,
    Direct,
}

impl From<M2lArg> for M2lForm {
    fn from(m: M2lArg) -> Self {
        match m {
            M2lArg::Rotation => M2lForm::Rotation,
            M2lArg::Direct => M2lForm::Direct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HaloWaitArg {
    Rank,
    Any,
}

impl From<HaloWaitArg> for HaloWait {
    fn from(h: HaloWaitArg) -> Self {
        match h {
            HaloWaitArg::Rank => HaloWait::RankOrder,
            HaloWaitArg::Any => HaloWait::Completion,
        }
    }
}

/// Where the points come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// uniform, gaussian, shell, helix or galaxy.
    #[arg(long, default_value = "uniform")]
    pub dist: String,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Source file (binary FMM3, or CSV by extension); overrides --dist/--n.
    #[arg(long)]
    pub points_file: Option<PathBuf>,
    /// Evaluation points; defaults to the sources.
    #[arg(long)]
    pub targets_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FmmArgs {
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    /// Levels of each rank's tree.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Fixed expansion order; overrides --tol.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub bound_constant: f64,
    /// Number of ranks.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, value_enum, default_value = "memory", env = "BALFMM_BACKEND")]
    pub backend: Backend,
    /// host:port roster file; with the tcp backend this process joins it as --rank.
    #[arg(long, env = "BALFMM_ROSTER")]
    pub roster: Option<PathBuf>,
    #[arg(long, env = "BALFMM_RANK")]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value = "cubic")]
    pub partition: PartitionArg,
    #[arg(long, value_enum, default_value = "rotation")]
    pub m2l: M2lArg,
    #[arg(long, value_enum, default_value = "rank")]
    pub halo_wait: HaloWaitArg,
    /// Seconds a rank may block on one receive.
    #[arg(long, default_value_t = 3600.0)]
    pub watchdog: f64,
}

impl Default for FmmArgs {
    fn default() -> Self {
        Self {
            theta: 0.5,
            eta: 0.5,
            levels: 3,
            tol: 1e-6,
            order: None,
            bound_constant: 1.0,
            p: 1,
            backend: Backend::Memory,
            roster: None,
            rank: None,
            partition: PartitionArg::Cubic,
            m2l: M2lArg::Rotation,
            halo_wait: HaloWaitArg::Rank,
            watchdog: 3600.0,
        }
    }
}

impl FmmArgs {
    pub fn config(&self) -> FmmConfig {
        FmmConfig {
            theta: self.theta,
            eta: self.eta,
            levels: self.levels,
            precision: match self.order {
                Some(q) => Precision::Order(q),
                None => Precision::Tolerance(self.tol),
            },
            bound_constant: self.bound_constant,
            ranks: self.p,
            partition: self.partition.into(),
            halo_wait: self.halo_wait.into(),
            m2l: self.m2l.into(),
            watchdog_secs: self.watchdog,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fmm: FmmArgs,
    /// Compare against the direct sum.
    #[arg(long)]
    pub check_oracle: bool,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Potential file (binary, or CSV by extension).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fmm: FmmArgs,
    /// Largest k in the tolerance 10^-k.
    #[arg(long, default_value_t = 12)]
    pub k_max: u32,
    /// Factor on the bound that errors must stay under.
    #[arg(long, default_value_t = 10.0)]
    pub slack: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Theta,
    Levels,
    Eta,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fmm: FmmArgs,
    /// Parameters to sweep; all three when absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub param: Vec<SweepParam>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
    pub theta_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub level_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub eta_values: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    pub repeats: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConnectivityArgs {
    #[arg(long, default_value = "uniform")]
    pub dist: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub points_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Rank counts; the first must be 1 (the reference).
    #[arg(long, value_delimiter = ',', default_value = "1,8,27,64")]
    pub p: Vec<usize>,
    #[arg(long, value_enum, default_value = "cubic")]
    pub partition: PartitionArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GalaxyEtaArgs {
    #[arg(long, default_value = "galaxy")]
    pub dist: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub points_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub eta: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    #[arg(long, value_enum, default_value = "cubic")]
    pub partition: PartitionArg,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 3600.0)]
    pub watchdog: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}
