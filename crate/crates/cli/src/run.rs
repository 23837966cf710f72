use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use balfmm::datasets::{generate, load_points, Distribution, GalaxyParams, GeneratorSpec};
use balfmm::engine::{run_memory, run_roster, run_serial, run_tcp_local, FmmConfig, RunOutput};
use balfmm::transport::read_roster;
use balfmm::{Source, TargetPoint};
use serde::Serialize;

use crate::args::{Backend, DataArgs, FmmArgs};

/// Smallest galaxy seed count when the depth is derived from `n`.
pub const GALAXY_MIN_SEEDS: usize = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub dist: String,
    pub n: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<usize>,
}

/// Unit-mass points of a named distribution; galaxies pick the deepest
/// recursion that keeps at least [`GALAXY_MIN_SEEDS`] seeds.
pub fn generate_named(dist: &str, n: usize, seed: u64) -> Result<Vec<Source>> {
    let distribution = match Distribution::by_name(dist)? {
        Distribution::Galaxy(_) => Distribution::Galaxy(GalaxyParams::for_count(n, GALAXY_MIN_SEEDS.min(n))?),
        d => d,
    };
    Ok(generate(&GeneratorSpec::new(distribution, n, seed))?)
}

pub fn sources_from(dist: &str, n: usize, seed: u64, file: Option<&PathBuf>) -> Result<(Vec<Source>, DatasetInfo)> {
    let sources = match file {
        Some(path) => load_points(path).with_context(|| format!("reading {}", path.display()))?,
        None => generate_named(dist, n, seed)?,
    };
    let info = DatasetInfo {
        dist: if file.is_some() { "file".into() } else { dist.into() },
        n: sources.len(),
        seed,
        points_file: file.cloned(),
        targets: None,
    };
    Ok((sources, info))
}

pub fn load_data(data: &DataArgs) -> Result<(Vec<Source>, Option<Vec<TargetPoint>>, DatasetInfo)> {
    let (sources, mut info) = sources_from(&data.dist, data.n, data.seed, data.points_file.as_ref())?;
    let targets = match &data.targets_file {
        None => None,
        Some(path) => {
            let pts = load_points(path).with_context(|| format!("reading {}", path.display()))?;
            Some(pts.into_iter().map(|s| TargetPoint { position: s.position, global_id: s.global_id }).collect::<Vec<_>>())
        }
    };
    info.targets = targets.as_ref().map(Vec::len);
    Ok((sources, targets, info))
}

/// Runs one configuration on the selected backend. Returns `None` on
/// non-zero ranks of a multi-process roster.
pub fn execute(
    sources: &[Source],
    targets: Option<&[TargetPoint]>,
    config: &FmmConfig,
    fmm: &FmmArgs,
) -> Result<Option<RunOutput>> {
    let out = match fmm.backend {
        Backend::Memory if config.ranks == 1 => run_serial(sources, targets, config)?,
        Backend::Memory => run_memory(sources, targets, config)?,
        Backend::Tcp => match &fmm.roster {
            None => run_tcp_local(sources, targets, config)?,
            Some(path) => {
                let roster = read_roster(path).with_context(|| format!("reading roster {}", path.display()))?;
                let Some(rank) = fmm.rank else { bail!("--rank (or BALFMM_RANK) is required with a roster") };
                return Ok(run_roster(rank, &roster, sources, targets, config)?);
            }
        },
    };
    Ok(Some(out))
}

/// Index of the smallest value; ties keep the first.
pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
